//! TOML model files.
//!
//! ```toml
//! [model]
//! kind = "linear"          # or "nonlinear"
//! d = 1
//! m = 1
//!
//! [coefficients]           # optional named quasi-periodic functions
//! forcing = "cos(t) + cos(sqrt(2)*t)"
//! wobble = { offset = 1.0, modes = [{ amp = 0.5, freq = 1.0, phase = 0.0 }] }
//!
//! [drift]
//! A = [[-1]]               # linear: d×d entries
//! f = ["forcing"]          # linear: d entries; nonlinear: d expressions
//!
//! [diffusion]
//! B = [[[0]]]              # linear: m matrices d×d
//! g = [[1]]                # linear: m vectors of length d; nonlinear: d rows × m columns
//!
//! [regularity]             # nonlinear only
//! L = 1.0
//! K = 2.0
//! ```
//!
//! Entries are numbers, expression strings, or structured `{offset, modes}`
//! tables. Linear-model entries must reduce to quasi-periodic functions of
//! `t`.

use std::collections::BTreeMap;

use serde::Deserialize;
use toml::Spanned;

use super::expr::{ExprError, Expression, Scope};
use super::model::{estimate_regularity, LinearSdeModel, NonlinearSdeModel, RegularityReport, SdeModel};
use super::SdeError;
use crate::apfun::{QpFunction, QpMatrix};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    #[serde(default)]
    coefficients: BTreeMap<String, Spanned<RawEntry>>,
    drift: Option<RawDrift>,
    diffusion: Option<RawDiffusion>,
    regularity: Option<RawRegularity>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Spanned<String>,
    d: usize,
    #[serde(default)]
    m: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrift {
    #[serde(rename = "A")]
    a: Option<Spanned<Vec<Vec<Spanned<RawEntry>>>>>,
    f: Option<Spanned<Vec<Spanned<RawEntry>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    #[serde(rename = "B")]
    b: Option<Spanned<Vec<Vec<Vec<Spanned<RawEntry>>>>>>,
    g: Option<Spanned<Vec<Vec<Spanned<RawEntry>>>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegularity {
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "K")]
    k: f64,
}

#[derive(Deserialize, Clone)]
#[serde(untagged)]
enum RawEntry {
    Number(f64),
    Text(String),
    Structured(QpFunction),
}

/// A parsed model plus its validation diagnostics.
#[derive(Debug, Clone)]
pub struct ParsedModel {
    pub model: SdeModel,
    pub regularity: Option<RegularityReport>,
}

/// Byte offset to 1-based (line, column).
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(offset, |p| offset - p - 1) + 1;
    (line, col)
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn at(&self, offset: usize) -> (usize, usize) {
        line_col(self.text, offset)
    }

    fn shape(&self, span_start: usize, msg: String) -> SdeError {
        let (line, col) = self.at(span_start);
        SdeError::Shape(format!("line {line}, column {col}: {msg}"))
    }

    /// Maps an expression error inside a string literal starting at
    /// `span_start` (the opening quote) to file coordinates.
    fn expr_err(&self, span_start: usize, e: ExprError) -> SdeError {
        let (line, col) = self.at(span_start + 1 + e.offset());
        match e {
            ExprError::Unknown { name, .. } => SdeError::UnknownCoefficient { line, col, name },
            ExprError::UnsafeDivision { lo, hi, .. } => SdeError::UnsafeDivision {
                line,
                col,
                msg: format!("denominator enclosure [{lo}, {hi}] contains zero"),
            },
            ExprError::Syntax { msg, .. } | ExprError::NotQuasiPeriodic { msg, .. } => {
                SdeError::Parse { line, col, msg }
            }
        }
    }

    fn qp(&self, e: &Spanned<RawEntry>, coefs: &[(String, QpFunction)]) -> Result<QpFunction, SdeError> {
        let start = e.span().start;
        match e.get_ref() {
            RawEntry::Number(v) => Ok(QpFunction::constant(*v)),
            RawEntry::Structured(q) => Ok(q.clone()),
            RawEntry::Text(s) => {
                let scope = Scope {
                    dim: 0,
                    coefficients: coefs,
                };
                let ex = Expression::parse(s, &scope).map_err(|er| self.expr_err(start, er))?;
                ex.to_qp(coefs).map_err(|er| self.expr_err(start, er))
            }
        }
    }

    fn expression(&self, e: &Spanned<RawEntry>, d: usize, coefs: &[(String, QpFunction)]) -> Result<Expression, SdeError> {
        let start = e.span().start;
        let scope = Scope {
            dim: d,
            coefficients: coefs,
        };
        match e.get_ref() {
            RawEntry::Number(v) => {
                Expression::parse(&format!("{v:?}"), &scope).map_err(|er| self.expr_err(start, er))
            }
            RawEntry::Text(s) => Expression::parse(s, &scope).map_err(|er| self.expr_err(start, er)),
            RawEntry::Structured(_) => {
                let (line, col) = self.at(start);
                Err(SdeError::Parse {
                    line,
                    col,
                    msg: "structured coefficients belong in [coefficients]".into(),
                })
            }
        }
    }

    fn vector(
        &self,
        v: &Spanned<Vec<Spanned<RawEntry>>>,
        d: usize,
        what: &str,
        coefs: &[(String, QpFunction)],
    ) -> Result<QpMatrix, SdeError> {
        if v.get_ref().len() != d {
            return Err(self.shape(v.span().start, format!("{what} needs {d} entries, found {}", v.get_ref().len())));
        }
        let entries = v.get_ref().iter().map(|e| self.qp(e, coefs)).collect::<Result<Vec<_>, _>>()?;
        Ok(QpMatrix::vector(entries))
    }

    fn matrix(
        &self,
        rows: &[Vec<Spanned<RawEntry>>],
        span_start: usize,
        d: usize,
        what: &str,
        coefs: &[(String, QpFunction)],
    ) -> Result<QpMatrix, SdeError> {
        if rows.len() != d || rows.iter().any(|r| r.len() != d) {
            return Err(self.shape(span_start, format!("{what} must be {d}×{d}")));
        }
        let entries = rows
            .iter()
            .flatten()
            .map(|e| self.qp(e, coefs))
            .collect::<Result<Vec<_>, _>>()?;
        QpMatrix::new(d, d, entries).map_err(|e| SdeError::Shape(e.to_string()))
    }
}

fn de_error(text: &str, e: toml::de::Error) -> SdeError {
    let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    SdeError::Parse {
        line,
        col,
        msg: e.message().to_string(),
    }
}

/// Parses and validates a model file. Nonlinear models are additionally
/// checked against their declared regularity constants.
pub fn parse_model(text: &str) -> Result<ParsedModel, SdeError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| de_error(text, e))?;
    let cx = Ctx { text };
    let (d, m) = (raw.model.d, raw.model.m);
    if d == 0 {
        return Err(SdeError::Shape("model.d must be at least 1".into()));
    }

    let mut coefs: Vec<(String, QpFunction)> = Vec::new();
    for (name, entry) in &raw.coefficients {
        if name == "t" || name == "pi" || name.starts_with('x') && name[1..].parse::<usize>().is_ok() {
            let (line, col) = cx.at(entry.span().start);
            return Err(SdeError::Parse {
                line,
                col,
                msg: format!("coefficient name '{name}' is reserved"),
            });
        }
        let q = cx.qp(entry, &[])?;
        coefs.push((name.clone(), q));
    }

    let kind_span = raw.model.kind.span().start;
    match raw.model.kind.get_ref().as_str() {
        "linear" => {
            let drift = raw.drift.ok_or_else(|| SdeError::Shape("missing [drift] section".into()))?;
            let a = match &drift.a {
                Some(a) => cx.matrix(a.get_ref(), a.span().start, d, "A", &coefs)?,
                None => return Err(SdeError::Shape("linear model needs drift.A".into())),
            };
            let f = match &drift.f {
                Some(f) => cx.vector(f, d, "f", &coefs)?,
                None => QpMatrix::zeros(d, 1),
            };
            let (mut b, mut g) = (Vec::new(), Vec::new());
            if let Some(diff) = &raw.diffusion {
                if let Some(bs) = &diff.b {
                    if bs.get_ref().len() != m {
                        return Err(cx.shape(bs.span().start, format!("B needs {m} matrices, found {}", bs.get_ref().len())));
                    }
                    for (i, bi) in bs.get_ref().iter().enumerate() {
                        b.push(cx.matrix(bi, bs.span().start, d, &format!("B{}", i + 1), &coefs)?);
                    }
                }
                if let Some(gs) = &diff.g {
                    if gs.get_ref().len() != m {
                        return Err(cx.shape(gs.span().start, format!("g needs {m} vectors, found {}", gs.get_ref().len())));
                    }
                    for (i, gi) in gs.get_ref().iter().enumerate() {
                        if gi.len() != d {
                            return Err(cx.shape(gs.span().start, format!("g{} needs {d} entries", i + 1)));
                        }
                        let entries = gi.iter().map(|e| cx.qp(e, &coefs)).collect::<Result<Vec<_>, _>>()?;
                        g.push(QpMatrix::vector(entries));
                    }
                }
            }
            if b.is_empty() {
                b = vec![QpMatrix::zeros(d, d); m];
            }
            if g.is_empty() {
                g = vec![QpMatrix::zeros(d, 1); m];
            }
            if raw.regularity.is_some() {
                return Err(SdeError::Invalid("[regularity] applies to nonlinear models only".into()));
            }
            Ok(ParsedModel {
                model: SdeModel::Linear(LinearSdeModel::new(a, f, b, g)?),
                regularity: None,
            })
        }
        "nonlinear" => {
            let drift = raw.drift.ok_or_else(|| SdeError::Shape("missing [drift] section".into()))?;
            if drift.a.is_some() {
                return Err(SdeError::Shape("nonlinear models give drift.f only".into()));
            }
            let f = drift.f.ok_or_else(|| SdeError::Shape("nonlinear model needs drift.f".into()))?;
            if f.get_ref().len() != d {
                return Err(cx.shape(f.span().start, format!("f needs {d} expressions")));
            }
            let drift_exprs = f
                .get_ref()
                .iter()
                .map(|e| cx.expression(e, d, &coefs))
                .collect::<Result<Vec<_>, _>>()?;
            let mut diff_exprs = Vec::new();
            match raw.diffusion.as_ref().and_then(|x| x.g.as_ref()) {
                Some(g) => {
                    if g.get_ref().len() != d || g.get_ref().iter().any(|r| r.len() != m) {
                        return Err(cx.shape(g.span().start, format!("g must be {d}×{m}")));
                    }
                    for e in g.get_ref().iter().flatten() {
                        diff_exprs.push(cx.expression(e, d, &coefs)?);
                    }
                }
                None if m == 0 => {}
                None => return Err(SdeError::Shape("nonlinear model needs diffusion.g".into())),
            }
            if raw.diffusion.as_ref().is_some_and(|x| x.b.is_some()) {
                return Err(SdeError::Shape("nonlinear models give diffusion.g only".into()));
            }
            let reg = raw
                .regularity
                .ok_or_else(|| SdeError::Invalid("nonlinear model needs [regularity] L and K".into()))?;
            let model = SdeModel::Nonlinear(NonlinearSdeModel::new(
                d,
                m,
                coefs,
                drift_exprs,
                diff_exprs,
                reg.l,
                reg.k,
            )?);
            let report = estimate_regularity(&model, 10.0, 0.1);
            Ok(ParsedModel {
                model,
                regularity: Some(report),
            })
        }
        other => {
            let (line, col) = cx.at(kind_span);
            Err(SdeError::Parse {
                line,
                col,
                msg: format!("unknown model kind '{other}'"),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
[model]
kind = "linear"
d = 1
m = 1

[drift]
A = [[-1]]
f = ["cos(t)"]

[diffusion]
B = [[[0]]]
g = [[1]]
"#;

    #[test]
    fn minimal_linear_config() {
        let p = parse_model(OU).unwrap();
        let SdeModel::Linear(l) = p.model else { panic!() };
        assert_eq!((l.dim(), l.noise_dim()), (1, 1));
        assert!(l.is_scalar());
        assert_eq!(l.a().get(0, 0).mean(), -1.0);
        assert!((l.f().get(0, 0).eval(0.3) - 0.3f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_b_shape() {
        let bad = OU.replace("B = [[[0]]]", "B = [[[0, 0], [0, 0]]]");
        assert!(matches!(parse_model(&bad), Err(SdeError::Shape(_))));
        let bad = OU.replace("B = [[[0]]]", "B = [[[0]], [[0]]]");
        assert!(matches!(parse_model(&bad), Err(SdeError::Shape(_))));
    }

    #[test]
    fn errors_have_positions() {
        let bad = OU.replace("f = [\"cos(t)\"]", "f = [\"cos(t) + + \"]");
        match parse_model(&bad) {
            Err(SdeError::Parse { line, col, .. }) => assert_eq!((line, col), (9, 16)),
            other => panic!("{other:?}"),
        }
        let bad = OU.replace("f = [\"cos(t)\"]", "f = [\"forcing\"]");
        assert!(matches!(parse_model(&bad), Err(SdeError::UnknownCoefficient { line: 9, .. })));
        let bad = OU.replace("d = 1\n", "d = \n");
        assert!(matches!(parse_model(&bad), Err(SdeError::Parse { line: 4, .. })));
    }

    #[test]
    fn unsafe_division_rejected() {
        let text = r#"
[model]
kind = "nonlinear"
d = 1
m = 1
[drift]
f = ["1/x1"]
[diffusion]
g = [["1"]]
[regularity]
L = 1
K = 1
"#;
        assert!(matches!(parse_model(text), Err(SdeError::UnsafeDivision { .. })));
    }

    #[test]
    fn coefficients_and_structured_form() {
        let text = r#"
[model]
kind = "linear"
d = 1
m = 1
[coefficients]
forcing = "cos(t) + cos(sqrt(2)*t)"
wobble = { offset = 1.0, modes = [{ amp = 0.5, freq = 1.0, phase = 0.0 }] }
[drift]
A = [[-1]]
f = ["forcing"]
[diffusion]
g = [["wobble"]]
"#;
        let SdeModel::Linear(l) = parse_model(text).unwrap().model else { panic!() };
        assert_eq!(l.f().get(0, 0).eval(0.0), 2.0);
        assert_eq!(l.g()[0].get(0, 0).eval(0.0), 1.5);
        assert!(l.has_additive_noise());
    }

    #[test]
    fn nonlinear_regularity_flag() {
        let text = r#"
[model]
kind = "nonlinear"
d = 1
m = 1
[coefficients]
c = "1 + 0.5*cos(t)"
[drift]
f = ["x1 + c*arctan(x1)"]
[diffusion]
g = [["1"]]
[regularity]
L = 2.5
K = 3.0
"#;
        let p = parse_model(text).unwrap();
        let r = p.regularity.unwrap();
        assert!(!r.lipschitz_violation);
        let tight = text.replace("L = 2.5", "L = 2.0");
        assert!(parse_model(&tight).unwrap().regularity.unwrap().lipschitz_violation);
    }
}
