use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column contract for the housing regression files: 13 features, target last.
pub const BOSTON_HEADER: [&str; 14] = [
    "CRIM", "ZN", "INDUS", "CHAS", "NOX", "RM", "AGE", "DIS", "RAD", "TAX", "PTRATIO", "B", "LSTAT", "MEDV",
];

/// Reads a headed numeric CSV whose header must equal `header`; the last
/// column is the target. Returns features `[n × (cols-1)]`, targets `[n × 1]`.
pub fn load_regression_csv(path: &Path, header: &[&str]) -> Result<(Tensor, Tensor)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let got: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if got != header {
        return Err(Error::Input(format!(
            "{}: header {:?} does not match expected {:?}",
            path.display(),
            got,
            header
        )));
    }
    let f = header.len() - 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(Error::Input(format!("{} row {}: {} fields", path.display(), row + 2, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                Error::Input(format!("{} row {} column {}: `{field}` is not a number", path.display(), row + 2, header[j]))
            })?;
            if j < f {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    let n = ys.len();
    Ok((Tensor::new(vec![n, f], xs)?, Tensor::new(vec![n, 1], ys)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "A,B,Y\n1,2,3\n4,5,6\n").unwrap();
        let (x, y) = load_regression_csv(&p, &["A", "B", "Y"]).unwrap();
        assert_eq!(x.data(), &[1., 2., 4., 5.]);
        assert_eq!(y.dims(), &[2, 1]);
        assert!(load_regression_csv(&p, &["A", "C", "Y"]).is_err());
        std::fs::write(&p, "A,B,Y\n1,x,3\n").unwrap();
        assert!(matches!(load_regression_csv(&p, &["A", "B", "Y"]), Err(Error::Input(_))));
    }
}
