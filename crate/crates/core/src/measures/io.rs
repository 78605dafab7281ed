//! CSV layouts: measures as `weight,x1..xd`; paths with a leading `time`
//! column, Gaussian paths as mean and row-major covariance.

use super::{EmpiricalMeasure, GaussianLaw, Law, MeasureError, MeasurePath};
use crate::report::{fmt_num, CsvTable};

fn coord_header(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |k| format!("{prefix}{k}"))
}

pub fn measure_table(m: &EmpiricalMeasure) -> CsvTable {
    let mut t = CsvTable::new(std::iter::once("weight".to_string()).chain(coord_header("x", m.dim())));
    for i in 0..m.len() {
        t.push_numbers(std::iter::once(m.weights()[i]).chain(m.point(i).iter().copied()));
    }
    t
}

pub fn write_measure_csv(m: &EmpiricalMeasure) -> Vec<u8> {
    measure_table(m).to_bytes()
}

/// Parses `weight,x1..xd`; weights are renormalized to absorb rounding in
/// the 12-digit text form.
pub fn read_measure_csv(text: &str) -> Result<EmpiricalMeasure, MeasureError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let d = r.headers()?.len().saturating_sub(1);
    if d == 0 {
        return Err(MeasureError::Invalid("expected columns weight,x1..xd".into()));
    }
    let (mut pts, mut w) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MeasureError::Invalid(format!("line {}: {e}", rec.position().map_or(0, |p| p.line()))))?;
        w.push(vals[0]);
        pts.extend_from_slice(&vals[1..]);
    }
    EmpiricalMeasure::normalized(d, pts, w)
}

/// One row per atom and time for empirical paths; one row per time for
/// Gaussian paths. Mixed paths are rejected.
pub fn path_table(path: &MeasurePath) -> Result<CsvTable, MeasureError> {
    let d = path.dim();
    let gaussian = matches!(path.laws()[0], Law::Gaussian(_));
    let mut t = if gaussian {
        let cov = (1..=d).flat_map(|i| (1..=d).map(move |j| format!("cov{i}_{j}")));
        CsvTable::new(
            ["time".to_string()]
                .into_iter()
                .chain(coord_header("mean", d))
                .chain(cov),
        )
    } else {
        CsvTable::new(
            ["time".to_string(), "weight".to_string()]
                .into_iter()
                .chain(coord_header("x", d)),
        )
    };
    for (time, law) in path.times().iter().zip(path.laws()) {
        match (law, gaussian) {
            (Law::Gaussian(g), true) => {
                let row = std::iter::once(*time)
                    .chain(g.mean().iter().copied())
                    .chain(g.covariance().iter().copied());
                t.push_numbers(row);
            }
            (Law::Empirical(m), false) => {
                for i in 0..m.len() {
                    let mut row = vec![fmt_num(*time), fmt_num(m.weights()[i])];
                    row.extend(m.point(i).iter().map(|&x| fmt_num(x)));
                    t.push(row);
                }
            }
            _ => return Err(MeasureError::InvalidPath("mixed Gaussian and empirical laws".into())),
        }
    }
    Ok(t)
}

pub fn write_path_csv(path: &MeasurePath) -> Result<Vec<u8>, MeasureError> {
    Ok(path_table(path)?.to_bytes())
}

/// Gaussian path from `time,mean1..,cov1_1..` rows.
pub fn read_gaussian_path_csv(text: &str) -> Result<MeasurePath, MeasureError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let cols = r.headers()?.len();
    // cols = 1 + d + d²
    let d = (1..=64).find(|d| 1 + d + d * d == cols).ok_or_else(|| {
        MeasureError::Invalid(format!("{cols} columns do not match time,mean,covariance"))
    })?;
    let (mut times, mut laws) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let vals = rec?
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MeasureError::Invalid(e.to_string()))?;
        times.push(vals[0]);
        laws.push(Law::Gaussian(GaussianLaw::new(vals[1..1 + d].to_vec(), vals[1 + d..].to_vec())?));
    }
    MeasurePath::new(times, laws)
}

/// Empirical path from `time,weight,x1..` rows grouped by time.
pub fn read_empirical_path_csv(text: &str) -> Result<MeasurePath, MeasureError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let d = r.headers()?.len().saturating_sub(2);
    if d == 0 {
        return Err(MeasureError::Invalid("expected columns time,weight,x1..xd".into()));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut groups: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for rec in r.records() {
        let vals = rec?
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MeasureError::Invalid(e.to_string()))?;
        if times.last() != Some(&vals[0]) {
            times.push(vals[0]);
            groups.push((Vec::new(), Vec::new()));
        }
        let g = groups.last_mut().unwrap();
        g.1.push(vals[1]);
        g.0.extend_from_slice(&vals[2..]);
    }
    let laws = groups
        .into_iter()
        .map(|(p, w)| EmpiricalMeasure::normalized(d, p, w).map(Law::Empirical))
        .collect::<Result<Vec<_>, _>>()?;
    MeasurePath::new(times, laws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_round_trip() {
        let m = EmpiricalMeasure::uniform(2, vec![0.1, 0.2, -3.0, 4.5, 7.0, 1e-5]).unwrap();
        let text = String::from_utf8(write_measure_csv(&m)).unwrap();
        assert!(text.starts_with("weight,x1,x2\n"));
        let back = read_measure_csv(&text).unwrap();
        assert_eq!(back.points(), m.points());
        assert!(back.weights().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-11));
    }

    #[test]
    fn path_round_trips() {
        let g = |m: f64| Law::Gaussian(GaussianLaw::new(vec![m, 0.0], vec![1.0, 0.25, 0.25, 2.0]).unwrap());
        let p = MeasurePath::new(vec![0.0, 0.5], vec![g(1.0), g(-1.0)]).unwrap();
        let text = String::from_utf8(write_path_csv(&p).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_gaussian_path_csv(&text).unwrap(), p);

        let e = |x: f64| Law::Empirical(EmpiricalMeasure::uniform(1, vec![x, x + 1.0]).unwrap());
        let p = MeasurePath::new(vec![0.0, 1.0, 2.0], vec![e(0.0), e(1.0), e(2.0)]).unwrap();
        let text = String::from_utf8(write_path_csv(&p).unwrap()).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert_eq!(read_empirical_path_csv(&text).unwrap(), p);
    }

    #[test]
    fn mixed_path_rejected() {
        let p = MeasurePath::new(
            vec![0.0, 1.0],
            vec![
                Law::Gaussian(GaussianLaw::scalar(0.0, 1.0).unwrap()),
                Law::Empirical(EmpiricalMeasure::dirac(&[0.0])),
            ],
        )
        .unwrap();
        assert!(write_path_csv(&p).is_err());
    }
}
