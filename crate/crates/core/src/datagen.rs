//! Seeded synthetic data sets (moons, circles, blobs) and CSV / LIBSVM I/O.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::kernel::DataMatrix;
use crate::rng::rng_from_seed;

pub const DEFAULT_MOONS_NOISE: f64 = 0.05;
pub const DEFAULT_CIRCLES_NOISE: f64 = 0.05;
pub const DEFAULT_CIRCLES_FACTOR: f64 = 0.5;
pub const DEFAULT_BLOBS_STD: f64 = 0.3;
/// Radius of the circle that carries blob centres when k ≠ 3.
pub const BLOBS_RING_RADIUS: f64 = 4.0;

/// Column name that marks ground-truth labels in CSV files.
pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Moons,
    Circles,
    Blobs,
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Moons => "moons",
            Shape::Circles => "circles",
            Shape::Blobs => "blobs",
        }
    }

    /// Natural cluster count of the shape.
    pub fn default_k(self) -> usize {
        match self {
            Shape::Moons | Shape::Circles => 2,
            Shape::Blobs => 3,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moons" => Ok(Shape::Moons),
            "circles" => Ok(Shape::Circles),
            "blobs" => Ok(Shape::Blobs),
            _ => Err(invalid(format!(
                "unknown shape `{s}` (expected moons, circles or blobs)"
            ))),
        }
    }
}

/// Everything that determines a synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub shape: Shape,
    pub n: usize,
    /// Noise stddev (moons, circles) or blob stddev.
    pub noise: f64,
    pub k: usize,
    pub seed: u64,
    /// Inner-circle radius (circles only).
    pub factor: f64,
    /// Blob centres; empty means the default layout for k.
    pub centers: Vec<[f64; 2]>,
}

impl SyntheticSpec {
    /// Calibrated defaults for the shape.
    pub fn new(shape: Shape, n: usize, seed: u64) -> Self {
        let noise = match shape {
            Shape::Moons => DEFAULT_MOONS_NOISE,
            Shape::Circles => DEFAULT_CIRCLES_NOISE,
            Shape::Blobs => DEFAULT_BLOBS_STD,
        };
        Self {
            shape,
            n,
            noise,
            k: shape.default_k(),
            seed,
            factor: DEFAULT_CIRCLES_FACTOR,
            centers: if shape == Shape::Blobs {
                default_centers(3)
            } else {
                Vec::new()
            },
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// Sets k; for blobs this also resets the centres to the default layout.
    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        if self.shape == Shape::Blobs {
            self.centers = default_centers(k);
        }
        self
    }

    pub fn generate(&self) -> Result<DataMatrix> {
        match self.shape {
            Shape::Moons => {
                if self.k != 2 {
                    return Err(invalid("moons always has k = 2"));
                }
                make_moons(self.n, self.noise, self.seed)
            }
            Shape::Circles => {
                if self.k != 2 {
                    return Err(invalid("circles always has k = 2"));
                }
                make_circles(self.n, self.noise, self.factor, self.seed)
            }
            Shape::Blobs => {
                let centers = if self.centers.is_empty() {
                    default_centers(self.k)
                } else {
                    self.centers.clone()
                };
                if centers.len() != self.k {
                    return Err(invalid(format!(
                        "{} centres given for k = {}",
                        centers.len(),
                        self.k
                    )));
                }
                make_blobs(self.n, &centers, self.noise, self.seed)
            }
        }
    }
}

/// (−3,0), (3,0), (0,4) for k = 3; otherwise evenly spaced on a ring.
pub fn default_centers(k: usize) -> Vec<[f64; 2]> {
    if k == 3 {
        return vec![[-3.0, 0.0], [3.0, 0.0], [0.0, 4.0]];
    }
    (0..k)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / k as f64;
            [BLOBS_RING_RADIUS * t.cos(), BLOBS_RING_RADIUS * t.sin()]
        })
        .collect()
}

fn check_noise(noise: f64) -> Result<Normal<f64>> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(invalid(format!(
            "noise must be finite and nonnegative, got {noise}"
        )));
    }
    Normal::new(0.0, noise).map_err(|e| invalid(e.to_string()))
}

/// Evenly spaced angles on [0, π] with both ends included.
fn half_circle_angles(count: usize) -> impl Iterator<Item = f64> {
    (0..count).map(move |i| {
        if count > 1 {
            PI * i as f64 / (count - 1) as f64
        } else {
            0.0
        }
    })
}

/// Two interleaving half circles: the upper one centred at the origin, the
/// lower one centred at (1, 0.5).
pub fn make_moons(n: usize, noise: f64, seed: u64) -> Result<DataMatrix> {
    if n < 2 {
        return Err(invalid("moons needs n >= 2"));
    }
    let normal = check_noise(noise)?;
    let mut rng = rng_from_seed(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for t in half_circle_angles(n_outer) {
        values.extend([t.cos(), t.sin()]);
        labels.push(0);
    }
    for t in half_circle_angles(n_inner) {
        values.extend([1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(1);
    }
    if noise > 0.0 {
        values
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    DataMatrix::new(values, n, 2, Some(labels))
}

/// Concentric circles of radius 1 (label 0) and `factor` (label 1).
pub fn make_circles(n: usize, noise: f64, factor: f64, seed: u64) -> Result<DataMatrix> {
    if n < 2 {
        return Err(invalid("circles needs n >= 2"));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(invalid(format!("factor must lie in (0, 1), got {factor}")));
    }
    let normal = check_noise(noise)?;
    let mut rng = rng_from_seed(seed);
    let n_outer = n / 2;
    let n_inner = n - n_outer;
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (count, radius, label) in [(n_outer, 1.0, 0), (n_inner, factor, 1)] {
        for i in 0..count {
            let t = 2.0 * PI * i as f64 / count as f64;
            values.extend([radius * t.cos(), radius * t.sin()]);
            labels.push(label);
        }
    }
    if noise > 0.0 {
        values
            .iter_mut()
            .for_each(|v| *v += normal.sample(&mut rng));
    }
    DataMatrix::new(values, n, 2, Some(labels))
}

/// Isotropic Gaussian blobs; the first n mod k blobs get one extra sample.
pub fn make_blobs(n: usize, centers: &[[f64; 2]], stddev: f64, seed: u64) -> Result<DataMatrix> {
    let k = centers.len();
    if k == 0 || n < k {
        return Err(invalid(format!(
            "blobs needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    for (a, ca) in centers.iter().enumerate() {
        if centers[a + 1..].iter().any(|cb| cb == ca) {
            return Err(invalid(format!("blob centre {ca:?} is repeated")));
        }
    }
    let normal = check_noise(stddev)?;
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        let size = n / k + usize::from(c < n % k);
        for _ in 0..size {
            for &x in center {
                values.push(if stddev > 0.0 {
                    x + normal.sample(&mut rng)
                } else {
                    x
                });
            }
            labels.push(c);
        }
    }
    DataMatrix::new(values, n, 2, Some(labels))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Reads a headed CSV; a column named `label` holds integer class labels.
pub fn read_csv(path: &Path) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_error(path, 1, "missing header row"));
    }
    let label_col = headers.iter().position(|h| h == LABEL_COLUMN);
    let d = headers.len() - usize::from(label_col.is_some());
    if d == 0 {
        return Err(parse_error(path, 1, "no feature columns"));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(n + 2, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_col {
                let label: usize = field
                    .parse()
                    .map_err(|_| parse_error(path, line, format!("bad label `{field}`")))?;
                labels.push(label);
            } else {
                let x: f64 = field
                    .parse()
                    .map_err(|_| parse_error(path, line, format!("bad number `{field}`")))?;
                if !x.is_finite() {
                    return Err(parse_error(
                        path,
                        line,
                        format!("non-finite value `{field}`"),
                    ));
                }
                values.push(x);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(parse_error(path, 2, "no data rows"));
    }
    DataMatrix::new(values, n, d, label_col.map(|_| labels))
}

/// Writes `x0..x{d-1}` columns plus `label` when present. Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_csv(data: &DataMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_error(path, io),
        other => parse_error(path, 0, format!("{other:?}")),
    })?;
    let to_err = |e: csv::Error| parse_error(path, 0, e.to_string());
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x{j}")).collect();
    if data.labels().is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    writer.write_record(&header).map_err(to_err)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.row(i).iter().map(|x| x.to_string()).collect();
        if let Some(labels) = data.labels() {
            row.push(labels[i].to_string());
        }
        writer.write_record(&row).map_err(to_err)?;
    }
    writer.flush().map_err(|e| io_error(path, e))
}

/// Reads `label idx:val ...` lines with 1-based indices into a dense matrix of
/// width max index. Distinct labels are mapped to 0..k−1 in ascending order.
pub fn read_libsvm(path: &Path) -> Result<DataMatrix> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut rows: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    let mut d = 0;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label_tok = parts.next().unwrap_or("");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad label `{label_tok}`")))?;
        let mut feats = Vec::new();
        let mut last = 0;
        for tok in parts {
            let (idx, val) = tok.split_once(':').ok_or_else(|| {
                parse_error(path, lineno, format!("expected index:value, found `{tok}`"))
            })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad index `{idx}`")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad value `{val}`")))?;
            if idx == 0 {
                return Err(parse_error(path, lineno, "feature indices are 1-based"));
            }
            if idx <= last {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("indices not strictly increasing at {idx}"),
                ));
            }
            if !val.is_finite() {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("non-finite value `{val}`"),
                ));
            }
            last = idx;
            d = d.max(idx);
            feats.push((idx - 1, val));
        }
        rows.push((label, feats));
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, "no samples"));
    }
    if d == 0 {
        return Err(parse_error(path, 1, "no features"));
    }
    let mut codes = BTreeMap::new();
    for (label, _) in &rows {
        codes.entry(label.to_bits_ordered()).or_insert(0usize);
    }
    for (code, slot) in codes.values_mut().enumerate() {
        *slot = code;
    }
    let n = rows.len();
    let mut values = vec![0.0; n * d];
    let mut labels = Vec::with_capacity(n);
    for (i, (label, feats)) in rows.into_iter().enumerate() {
        labels.push(codes[&label.to_bits_ordered()]);
        for (j, v) in feats {
            values[i * d + j] = v;
        }
    }
    DataMatrix::new(values, n, d, Some(labels))
}

trait OrderedBits {
    fn to_bits_ordered(self) -> i64;
}

impl OrderedBits for f64 {
    /// Integer key whose order matches the float order (total order).
    fn to_bits_ordered(self) -> i64 {
        let bits = (self + 0.0).to_bits() as i64;
        bits ^ (((bits >> 63) as u64) >> 1) as i64
    }
}

/// SHA-256 over the shape, raw feature bits and labels, as lowercase hex.
pub fn fingerprint(data: &DataMatrix) -> String {
    let mut h = Sha256::new();
    h.update((data.n() as u64).to_le_bytes());
    h.update((data.d() as u64).to_le_bytes());
    for x in data.values() {
        h.update(x.to_bits().to_le_bytes());
    }
    if let Some(labels) = data.labels() {
        for &l in labels {
            h.update((l as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
