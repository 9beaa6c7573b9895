//! CSV encodings of the library types.
//!
//! | file     | header                                   |
//! |----------|------------------------------------------|
//! | counts   | `x_type,y_type,count` (or `mass`)        |
//! | matrix   | `x_type,<y labels...>`                   |
//! | basis    | `k,x_type,y_type,value`                  |
//! | margins  | `side,type,mass` with side `x` or `y`    |
//! | lambda   | `k,value`                                |
//! | estimates| `parameter,kind,estimate,std_error`      |
//!
//! The partner token `0` marks singles. Labels keep their order of first
//! appearance; writers emit every category in canonical order (couples
//! x-major, then single men, then single women), so reading and writing a
//! canonical file reproduces it byte for byte.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{BasisSystem, Margins, MatchingPatterns, ParameterVector, SampleCounts, TypeSpace};

pub const SINGLE: &str = "0";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => Error::Parse { line, msg: format!("{}: {other:?}", path.display()) },
    }
}

/// Records with their 1-based line numbers, after checking the header.
fn records(path: &Path, headers: &[&[&str]]) -> Result<(usize, Vec<(u64, Vec<String>)>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(file);
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let variant = headers
        .iter()
        .position(|h| h.len() == header.len() && h.iter().zip(&header).all(|(a, b)| a == b))
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("{}: expected header `{}`, found `{}`", path.display(), headers[0].join(","), header.join(",")),
        })?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != header.len() {
            return Err(Error::Parse { line, msg: format!("expected {} fields, found {}", header.len(), rec.len()) });
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((variant, out))
}

fn number(field: &str, line: u64) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse { line, msg: format!("`{field}` is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("`{field}` is not finite") });
    }
    Ok(v)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    Ok(std::io::BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

fn finish(path: &Path, mut w: std::io::BufWriter<File>, body: String) -> Result<()> {
    w.write_all(body.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

/// Collects labels in order of first appearance, or maps onto a fixed type space.
struct Labels {
    fixed: bool,
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Labels {
    fn new(fixed: Option<&[String]>) -> Self {
        let names: Vec<String> = fixed.map(<[String]>::to_vec).unwrap_or_default();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Labels { fixed: fixed.is_some(), names, index }
    }

    fn get(&mut self, label: &str, line: u64) -> Result<usize> {
        if label.is_empty() {
            return Err(Error::Parse { line, msg: "empty type label".into() });
        }
        if let Some(&i) = self.index.get(label) {
            return Ok(i);
        }
        if self.fixed {
            return Err(Error::Parse { line, msg: format!("unknown type `{label}`") });
        }
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), self.names.len() - 1);
        Ok(self.names.len() - 1)
    }
}

/// Reads household counts. A `count` column must hold integers; a `mass`
/// column accepts expected (fractional) counts.
pub fn read_counts(path: &Path, types: Option<&TypeSpace>) -> Result<(TypeSpace, SampleCounts)> {
    let (variant, rows) = records(path, &[&["x_type", "y_type", "count"], &["x_type", "y_type", "mass"]])?;
    let mut xs = Labels::new(types.map(TypeSpace::x_labels));
    let mut ys = Labels::new(types.map(TypeSpace::y_labels));
    let mut cells: Vec<(Option<usize>, Option<usize>, f64, u64)> = Vec::with_capacity(rows.len());
    let mut seen = HashMap::new();
    for (line, r) in &rows {
        let (xl, yl) = (r[0].as_str(), r[1].as_str());
        if xl == SINGLE && yl == SINGLE {
            return Err(Error::Parse { line: *line, msg: "a household needs at least one member".into() });
        }
        let x = if xl == SINGLE { None } else { Some(xs.get(xl, *line)?) };
        let y = if yl == SINGLE { None } else { Some(ys.get(yl, *line)?) };
        let value = number(&r[2], *line)?;
        if value < 0.0 {
            return Err(Error::NegativeEntry { what: "household count", value });
        }
        if variant == 0 && value.fract() != 0.0 {
            return Err(Error::Parse { line: *line, msg: format!("count `{}` is not an integer", r[2]) });
        }
        if seen.insert((xl.to_string(), yl.to_string()), *line).is_some() {
            return Err(Error::DuplicateCell { x: xl.to_string(), y: yl.to_string() });
        }
        cells.push((x, y, value, *line));
    }
    let types = TypeSpace::new(xs.names, ys.names)?;
    let mut mu = MatchingPatterns::zeros(types.nx(), types.ny());
    for (x, y, value, _) in cells {
        match (x, y) {
            (Some(x), Some(y)) => mu.mu[(x, y)] = value,
            (Some(x), None) => mu.mu_x0[x] = value,
            (None, Some(y)) => mu.mu_0y[y] = value,
            (None, None) => unreachable!(),
        }
    }
    let sample = if variant == 0 { SampleCounts::from_counts(mu)? } else { SampleCounts::from_expected(mu)? };
    Ok((types, sample))
}

fn check_types(types: &TypeSpace, nx: usize, ny: usize) -> Result<()> {
    if types.nx() != nx || types.ny() != ny {
        return Err(Error::DimensionMismatch { what: "type labels", expected: nx * ny, found: types.nx() * types.ny() });
    }
    Ok(())
}

/// Writes every category in canonical order; the column is `count` for integral samples, else `mass`.
pub fn write_counts(path: &Path, types: &TypeSpace, sample: &SampleCounts) -> Result<()> {
    write_patterns(path, types, sample.counts(), if sample.is_integral() { "count" } else { "mass" })
}

/// Matching patterns in the counts layout under the given value column.
pub fn write_patterns(path: &Path, types: &TypeSpace, mu: &MatchingPatterns, column: &str) -> Result<()> {
    check_types(types, mu.nx(), mu.ny())?;
    let w = create(path)?;
    let mut body = format!("x_type,y_type,{column}\n");
    for (x, xl) in types.x_labels().iter().enumerate() {
        for (y, yl) in types.y_labels().iter().enumerate() {
            body.push_str(&format!("{xl},{yl},{}\n", mu.mu[(x, y)]));
        }
    }
    for (x, xl) in types.x_labels().iter().enumerate() {
        body.push_str(&format!("{xl},{SINGLE},{}\n", mu.mu_x0[x]));
    }
    for (y, yl) in types.y_labels().iter().enumerate() {
        body.push_str(&format!("{SINGLE},{yl},{}\n", mu.mu_0y[y]));
    }
    finish(path, w, body)
}

/// Matrix with y labels across the header and x labels down the first column.
pub fn read_matrix(path: &Path) -> Result<(TypeSpace, DMatrix<f64>)> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some("x_type") || header.len() < 2 {
        return Err(Error::Parse { line: 1, msg: format!("{}: header must be `x_type,<y labels>`", path.display()) });
    }
    let y_labels = header[1..].to_vec();
    let mut x_labels = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        x_labels.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            values.push(number(f, line)?);
        }
    }
    if x_labels.is_empty() {
        return Err(Error::Parse { line: 1, msg: format!("{}: no rows", path.display()) });
    }
    let types = TypeSpace::new(x_labels, y_labels)?;
    Ok((types.clone(), DMatrix::from_row_slice(types.nx(), types.ny(), &values)))
}

pub fn write_matrix(path: &Path, types: &TypeSpace, m: &DMatrix<f64>) -> Result<()> {
    check_types(types, m.nrows(), m.ncols())?;
    let w = create(path)?;
    let mut body = format!("x_type,{}\n", types.y_labels().join(","));
    for (x, xl) in types.x_labels().iter().enumerate() {
        body.push_str(xl);
        for y in 0..m.ncols() {
            body.push_str(&format!(",{}", m[(x, y)]));
        }
        body.push('\n');
    }
    finish(path, w, body)
}

/// Long-format basis; cells not listed are zero.
pub fn read_basis(path: &Path, types: Option<&TypeSpace>) -> Result<(TypeSpace, BasisSystem)> {
    let (_, rows) = records(path, &[&["k", "x_type", "y_type", "value"]])?;
    let mut xs = Labels::new(types.map(TypeSpace::x_labels));
    let mut ys = Labels::new(types.map(TypeSpace::y_labels));
    let mut ks = Labels::new(None);
    let mut entries = Vec::with_capacity(rows.len());
    let mut seen = HashMap::new();
    for (line, r) in &rows {
        if r[1] == SINGLE || r[2] == SINGLE {
            return Err(Error::Parse { line: *line, msg: "basis functions are defined on couples only".into() });
        }
        let k = ks.get(&r[0], *line)?;
        let x = xs.get(&r[1], *line)?;
        let y = ys.get(&r[2], *line)?;
        if seen.insert((k, x, y), *line).is_some() {
            return Err(Error::DuplicateCell { x: r[1].clone(), y: format!("{} (basis {})", r[2], r[0]) });
        }
        entries.push((k, x, y, number(&r[3], *line)?));
    }
    let types = TypeSpace::new(xs.names, ys.names)?;
    let mut bases = vec![DMatrix::zeros(types.nx(), types.ny()); ks.names.len()];
    for (k, x, y, v) in entries {
        bases[k][(x, y)] = v;
    }
    Ok((types, BasisSystem::new(bases, ks.names)?))
}

pub fn write_basis(path: &Path, types: &TypeSpace, basis: &BasisSystem) -> Result<()> {
    check_types(types, basis.nx(), basis.ny())?;
    let w = create(path)?;
    let mut body = String::from("k,x_type,y_type,value\n");
    for (name, b) in basis.names().iter().zip(basis.bases()) {
        for (x, xl) in types.x_labels().iter().enumerate() {
            for (y, yl) in types.y_labels().iter().enumerate() {
                body.push_str(&format!("{name},{xl},{yl},{}\n", b[(x, y)]));
            }
        }
    }
    finish(path, w, body)
}

pub fn read_margins(path: &Path, types: Option<&TypeSpace>) -> Result<(TypeSpace, Margins)> {
    let (_, rows) = records(path, &[&["side", "type", "mass"]])?;
    let mut xs = Labels::new(types.map(TypeSpace::x_labels));
    let mut ys = Labels::new(types.map(TypeSpace::y_labels));
    let mut n = HashMap::new();
    let mut m = HashMap::new();
    for (line, r) in &rows {
        let value = number(&r[2], *line)?;
        if value < 0.0 {
            return Err(Error::NegativeEntry { what: "margin", value });
        }
        let (slot, idx) = match r[0].as_str() {
            "x" => (&mut n, xs.get(&r[1], *line)?),
            "y" => (&mut m, ys.get(&r[1], *line)?),
            other => return Err(Error::Parse { line: *line, msg: format!("side must be `x` or `y`, found `{other}`") }),
        };
        if slot.insert(idx, value).is_some() {
            return Err(Error::DuplicateCell { x: r[0].clone(), y: r[1].clone() });
        }
    }
    let types = TypeSpace::new(xs.names, ys.names)?;
    let n = DVector::from_fn(types.nx(), |x, _| n.get(&x).copied().unwrap_or(0.0));
    let m = DVector::from_fn(types.ny(), |y, _| m.get(&y).copied().unwrap_or(0.0));
    Ok((types, Margins::new(n, m)?))
}

pub fn write_margins(path: &Path, types: &TypeSpace, margins: &Margins) -> Result<()> {
    check_types(types, margins.nx(), margins.ny())?;
    let w = create(path)?;
    let mut body = String::from("side,type,mass\n");
    for (x, l) in types.x_labels().iter().enumerate() {
        body.push_str(&format!("x,{l},{}\n", margins.n[x]));
    }
    for (y, l) in types.y_labels().iter().enumerate() {
        body.push_str(&format!("y,{l},{}\n", margins.m[y]));
    }
    finish(path, w, body)
}

/// Coefficients by basis name, reordered to match `names` when given.
pub fn read_lambda(path: &Path, names: Option<&[String]>) -> Result<(Vec<String>, DVector<f64>)> {
    let (_, rows) = records(path, &[&["k", "value"]])?;
    let mut ks = Labels::new(names);
    let mut values = HashMap::new();
    for (line, r) in &rows {
        let k = ks.get(&r[0], *line)?;
        if values.insert(k, number(&r[1], *line)?).is_some() {
            return Err(Error::DuplicateCell { x: r[0].clone(), y: "lambda".into() });
        }
    }
    if let Some(missing) = (0..ks.names.len()).find(|k| !values.contains_key(k)) {
        return Err(Error::InvalidInput(format!("{}: no coefficient for `{}`", path.display(), ks.names[missing])));
    }
    let v = DVector::from_fn(ks.names.len(), |k, _| values[&k]);
    Ok((ks.names, v))
}

pub fn write_lambda(path: &Path, names: &[String], lambda: &DVector<f64>) -> Result<()> {
    if names.len() != lambda.len() {
        return Err(Error::DimensionMismatch { what: "lambda names", expected: lambda.len(), found: names.len() });
    }
    let w = create(path)?;
    let mut body = String::from("k,value\n");
    for (n, v) in names.iter().zip(lambda.iter()) {
        body.push_str(&format!("{n},{v}\n"));
    }
    finish(path, w, body)
}

/// Parameter table: `lambda` rows by basis name, then `u` and `v` rows by type.
/// Missing standard errors are written as empty fields.
pub fn write_estimates(
    path: &Path,
    types: &TypeSpace,
    names: &[String],
    alpha: &ParameterVector,
    std_errors: Option<&DVector<f64>>,
) -> Result<()> {
    check_types(types, alpha.u.len(), alpha.v.len())?;
    let w = create(path)?;
    let mut body = String::from("parameter,kind,estimate,std_error\n");
    let rows = names
        .iter()
        .map(|n| (n.as_str(), "lambda"))
        .chain(types.x_labels().iter().map(|l| (l.as_str(), "u")))
        .chain(types.y_labels().iter().map(|l| (l.as_str(), "v")));
    for (i, ((name, kind), value)) in rows.zip(alpha.to_flat().iter()).enumerate() {
        let se = std_errors.map(|s| s[i].to_string()).unwrap_or_default();
        body.push_str(&format!("{name},{kind},{value},{se}\n"));
    }
    finish(path, w, body)
}

/// Reads a parameter table written by [`write_estimates`] against known labels.
pub fn read_estimates(path: &Path, types: &TypeSpace, names: &[String]) -> Result<(ParameterVector, Option<DVector<f64>>)> {
    let (_, rows) = records(path, &[&["parameter", "kind", "estimate", "std_error"]])?;
    let k = names.len();
    let (nx, ny) = (types.nx(), types.ny());
    let mut est = vec![None; k + nx + ny];
    let mut se = vec![None; k + nx + ny];
    for (line, r) in &rows {
        let slot = match r[1].as_str() {
            "lambda" => names.iter().position(|n| *n == r[0]),
            "u" => types.x_index(&r[0]).map(|i| k + i),
            "v" => types.y_index(&r[0]).map(|i| k + nx + i),
            other => return Err(Error::Parse { line: *line, msg: format!("unknown parameter kind `{other}`") }),
        }
        .ok_or_else(|| Error::Parse { line: *line, msg: format!("unknown parameter `{}`", r[0]) })?;
        if est[slot].is_some() {
            return Err(Error::DuplicateCell { x: r[0].clone(), y: r[1].clone() });
        }
        est[slot] = Some(number(&r[2], *line)?);
        if !r[3].is_empty() {
            se[slot] = Some(number(&r[3], *line)?);
        }
    }
    let flat: Option<Vec<f64>> = est.into_iter().collect();
    let flat = flat.ok_or_else(|| Error::InvalidInput(format!("{}: missing parameters", path.display())))?;
    let alpha = ParameterVector::from_flat(&DVector::from_vec(flat), k, nx, ny)?;
    let se: Option<Vec<f64>> = se.into_iter().collect();
    Ok((alpha, se.map(DVector::from_vec)))
}

/// Type-level utilities as `side,type,utility`.
pub fn write_utilities(path: &Path, types: &TypeSpace, u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    check_types(types, u.len(), v.len())?;
    let w = create(path)?;
    let mut body = String::from("side,type,utility\n");
    for (x, l) in types.x_labels().iter().enumerate() {
        body.push_str(&format!("x,{l},{}\n", u[x]));
    }
    for (y, l) in types.y_labels().iter().enumerate() {
        body.push_str(&format!("y,{l},{}\n", v[y]));
    }
    finish(path, w, body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp(name: &str, content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        fs::write(&p, content).unwrap();
        (dir, p)
    }

    #[test]
    fn counts_total() {
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y1,4\nx1,0,2\n0,y1,2\n");
        let (types, s) = read_counts(&p, None).unwrap();
        assert_eq!(s.n_households(), 8.0);
        assert_eq!(types.x_labels(), &["x1".to_string()]);
    }

    #[test]
    fn duplicate_cell_named() {
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y1,4\nx1,y1,2\n");
        match read_counts(&p, None) {
            Err(Error::DuplicateCell { x, y }) => assert_eq!((x.as_str(), y.as_str()), ("x1", "y1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y1,4\nx1,0,abc\n");
        assert!(matches!(read_counts(&p, None), Err(Error::Parse { line: 3, .. })));
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y1,1.5\n");
        assert!(matches!(read_counts(&p, None), Err(Error::Parse { line: 2, .. })));
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y1,-1\n");
        assert!(matches!(read_counts(&p, None), Err(Error::NegativeEntry { .. })));
        let (_d, p) = tmp("c.csv", "x,y,count\n");
        assert!(matches!(read_counts(&p, None), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_counts(Path::new("/nonexistent/c.csv"), None), Err(Error::Io { .. })));
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text = "x_type,y_type,count\nlow,a,4\nlow,b,0\nhigh,a,7\nhigh,b,1\nlow,0,2\nhigh,0,3\n0,a,2\n0,b,5\n";
        let (d, p) = tmp("c.csv", text);
        let (types, s) = read_counts(&p, None).unwrap();
        let out = d.path().join("out.csv");
        write_counts(&out, &types, &s).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap(), text);
        let text = "x_type,y_type,mass\nx1,y1,0.3333333333333333\nx1,0,0.1\n0,y1,1e-300\n";
        let (d, p) = tmp("m.csv", text);
        let (types, s) = read_counts(&p, None).unwrap();
        let out = d.path().join("out.csv");
        write_counts(&out, &types, &s).unwrap();
        let (_, back) = read_counts(&out, None).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn matrix_basis_margins_lambda_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let types = TypeSpace::new(vec!["a".into(), "b".into()], vec!["p".into(), "q".into(), "r".into()]).unwrap();
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.0, 3.5, 1e-9, 0.0, 7.0]);
        let p = dir.path().join("phi.csv");
        write_matrix(&p, &types, &m).unwrap();
        assert_eq!(read_matrix(&p).unwrap(), (types.clone(), m.clone()));

        let basis = BasisSystem::new(vec![m.clone(), m.map(|v| v * v)], vec!["lin".into(), "sq".into()]).unwrap();
        let p = dir.path().join("basis.csv");
        write_basis(&p, &types, &basis).unwrap();
        assert_eq!(read_basis(&p, None).unwrap(), (types.clone(), basis.clone()));

        let margins = Margins::from_slices(&[1.0, 2.5], &[0.5, 0.0, 3.0]).unwrap();
        let p = dir.path().join("margins.csv");
        write_margins(&p, &types, &margins).unwrap();
        assert_eq!(read_margins(&p, Some(&types)).unwrap(), (types.clone(), margins));

        let lambda = DVector::from_vec(vec![0.7, -0.3]);
        let p = dir.path().join("lambda.csv");
        write_lambda(&p, basis.names(), &lambda).unwrap();
        let rev = vec!["sq".to_string(), "lin".to_string()];
        assert_eq!(read_lambda(&p, Some(&rev)).unwrap().1, DVector::from_vec(vec![-0.3, 0.7]));

        let alpha = ParameterVector::new(lambda, DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0, 5.0])).unwrap();
        let se = DVector::from_fn(7, |i, _| 0.01 * i as f64);
        let p = dir.path().join("est.csv");
        write_estimates(&p, &types, basis.names(), &alpha, Some(&se)).unwrap();
        let (a, s) = read_estimates(&p, &types, basis.names()).unwrap();
        assert_eq!(a, alpha);
        assert_eq!(s.unwrap(), se);
        write_estimates(&p, &types, basis.names(), &alpha, None).unwrap();
        assert_eq!(read_estimates(&p, &types, basis.names()).unwrap().1, None);
    }

    #[test]
    fn unknown_labels_rejected_against_fixed_types() {
        let types = TypeSpace::numbered(1, 1).unwrap();
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\nx1,y9,4\n");
        assert!(matches!(read_counts(&p, Some(&types)), Err(Error::Parse { line: 2, .. })));
        let (_d, p) = tmp("c.csv", "x_type,y_type,count\n0,0,4\n");
        assert!(read_counts(&p, None).is_err());
    }
}
