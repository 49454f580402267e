//! Ground-truth field synthesis: a seeded Gaussian-process draw on a grid,
//! held exactly as the kernel interpolant of the drawn values.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)`; the field uses stream 0 and agent `i` uses stream
//! `i + 1`. Normal deviates are drawn in `f64` with `rand_distr::StandardNormal`
//! and converted to the working scalar afterwards, so a seed produces the
//! same field for every scalar type.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::kernel::{gram_entries, KernelFamily, KernelSpec};
use crate::linalg::factor_with_jitter;
use crate::rkhs::{check_distinct, KernelExpansion};
use crate::scalar::{Points, Real};
use crate::{Error, Result};

/// Stream id reserved for field synthesis.
pub const FIELD_STREAM: u64 = 0;

/// Deterministic generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldSpec<T> {
    pub kernel: KernelSpec<T>,
    pub grid: Points<T>,
    pub seed: u64,
    pub noise_std: T,
}

/// The synthesized field together with the drawn grid values.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub expansion: KernelExpansion<T>,
    /// Field values at the expansion centers.
    pub values: Vec<T>,
}

impl<T: Real> GroundTruth<T> {
    /// The zero field on `grid`.
    pub fn zero(kernel: KernelSpec<T>, grid: Points<T>) -> Result<Self> {
        let n = grid.len();
        Ok(Self { expansion: KernelExpansion::new(kernel, grid, vec![T::zero(); n])?, values: vec![T::zero(); n] })
    }

    pub fn convert<U: Real>(&self) -> GroundTruth<U> {
        GroundTruth { expansion: self.expansion.convert(), values: self.values.iter().map(|v| U::lit(v.as_f64())).collect() }
    }
}

/// Draws `g = chol(K) z` and returns the interpolant `alpha = K^{-1} g`.
pub fn synthesize_field<T: Real>(fs: &FieldSpec<T>) -> Result<GroundTruth<T>> {
    fs.kernel.check_points(&fs.grid)?;
    check_distinct(&fs.grid)?;
    let k = gram_entries(&fs.kernel, &fs.grid, &fs.grid);
    let (chol, _) = factor_with_jitter(&k, fs.kernel.default_jitter())?;
    let mut rng = stream_rng(fs.seed, FIELD_STREAM);
    let z: Vec<T> = (0..fs.grid.len()).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    let lower = chol.lower();
    let values: Vec<T> = (0..z.len()).map(|i| (0..=i).map(|j| lower[(i, j)] * z[j]).sum()).collect();
    let alpha = chol.solve(&values);
    Ok(GroundTruth { expansion: KernelExpansion::new(fs.kernel, fs.grid.clone(), alpha)?, values })
}

/// `g(x)` plus Gaussian noise of standard deviation `noise_std`.
pub fn sample_field<T: Real, R: Rng + ?Sized>(g: &KernelExpansion<T>, x: &[T], noise_std: T, rng: &mut R) -> T {
    let clean = g.evaluate_unchecked(x);
    if noise_std == T::zero() {
        clean
    } else {
        clean + noise_std * T::lit(rng.sample::<f64, _>(StandardNormal))
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num<T: Real>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

const ARTIFACT_MAGIC: &str = "# ks-field v1";

/// Serializes as a header, a kernel line and one `coords... alpha g` line
/// per center.
pub fn field_to_string<T: Real>(field: &GroundTruth<T>, seed: u64) -> String {
    let spec = field.expansion.spec();
    let mut s = String::new();
    writeln!(s, "{ARTIFACT_MAGIC}").unwrap();
    writeln!(
        s,
        "kernel {} sigma={} ell={} dim={} seed={}",
        spec.family().name(),
        fmt_num(spec.sigma()),
        fmt_num(spec.ell()),
        spec.dim(),
        seed
    )
    .unwrap();
    for ((c, a), g) in field.expansion.centers().iter().zip(field.expansion.coefficients()).zip(&field.values) {
        let coords: Vec<String> = c.iter().map(|v| fmt_num(*v)).collect();
        writeln!(s, "{} {} {}", coords.join(" "), fmt_num(*a), fmt_num(*g)).unwrap();
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Parses [`field_to_string`] output. Returns the field and the seed.
pub fn field_from_str<T: Real>(text: &str) -> Result<(GroundTruth<T>, u64)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == ARTIFACT_MAGIC => {}
        _ => return Err(parse_err(1, format!("expected header `{ARTIFACT_MAGIC}`"))),
    }
    let (kl, kline) = lines.next().ok_or_else(|| parse_err(2, "missing kernel line"))?;
    let mut tok = kline.split_whitespace();
    if tok.next() != Some("kernel") {
        return Err(parse_err(kl, "expected `kernel <family> sigma=.. ell=.. dim=.. seed=..`"));
    }
    let family = tok
        .next()
        .and_then(KernelFamily::parse)
        .ok_or_else(|| parse_err(kl, "unknown kernel family"))?;
    let (mut sigma, mut ell, mut dim, mut seed) = (None, None, None, None);
    for t in tok {
        let (k, v) = t.split_once('=').ok_or_else(|| parse_err(kl, format!("malformed token `{t}`")))?;
        match k {
            "sigma" => sigma = v.parse::<f64>().ok(),
            "ell" => ell = v.parse::<f64>().ok(),
            "dim" => dim = v.parse::<usize>().ok(),
            "seed" => seed = v.parse::<u64>().ok(),
            _ => return Err(parse_err(kl, format!("unknown key `{k}`"))),
        }
    }
    let (sigma, ell, dim, seed) = match (sigma, ell, dim, seed) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => return Err(parse_err(kl, "kernel line needs sigma, ell, dim and seed")),
    };
    let spec = KernelSpec::new(family, T::lit(sigma), T::lit(ell), dim).map_err(|e| parse_err(kl, e.to_string()))?;
    let mut centers = Points::new(dim);
    let mut alpha = Vec::new();
    let mut values = Vec::new();
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("invalid number `{t}`"))))
            .collect::<Result<_>>()?;
        if nums.len() != dim + 2 {
            return Err(parse_err(ln, format!("expected {} columns, found {}", dim + 2, nums.len())));
        }
        let p: Vec<T> = nums[..dim].iter().map(|v| T::lit(*v)).collect();
        centers.push(&p);
        alpha.push(T::lit(nums[dim]));
        values.push(T::lit(nums[dim + 1]));
    }
    let expansion = KernelExpansion::new(spec, centers, alpha).map_err(|e| match e {
        Error::DuplicateCenter { index } => parse_err(index + 3, "duplicate center"),
        other => other,
    })?;
    Ok((GroundTruth { expansion, values }, seed))
}

pub fn write_field<T: Real>(path: &Path, field: &GroundTruth<T>, seed: u64) -> Result<()> {
    std::fs::write(path, field_to_string(field, seed))?;
    Ok(())
}

pub fn read_field<T: Real>(path: &Path) -> Result<(GroundTruth<T>, u64)> {
    field_from_str(&std::fs::read_to_string(path)?)
}
