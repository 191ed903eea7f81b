//! Text checkpoint for offline-phase artifacts.
//!
//! One `key = value` pair per line; `#` starts a comment. Floating-point
//! scalars use Rust's shortest round-trip formatting, model parameters are
//! written as the hexadecimal bit patterns of their `f32` values so they load
//! back bit-exactly.
//!
//! ```text
//! format_version = 1
//! arch = input=1x12x12;flatten;dense:144:32;relu;dense:32:10
//! pub_fingerprint = 1234567890
//! reference_index = 3
//! svm.lambda = 0.001
//! svm.eta = 0.01
//! svm.epochs = 1000
//! svm.w = -1.5 -2.25
//! svm.b = 0.5
//! svm.mean = 0.01 0.2
//! svm.scale = 0.02 0.3
//! samples = 2
//! sample.0 = 0 0 benign -
//! sample.1 = 0.08 0.61 malicious sign_flip
//! reference.params = 3f800000 bf000000 ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DefenseModel, FeatureSample, Features, Identity, OfflineArtifacts, SvmParams};
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::nn::ModelArch;

pub const CHECKPOINT_VERSION: u32 = 1;

fn pair(v: [f64; 2]) -> String {
    format!("{} {}", v[0], v[1])
}

/// Writes `art` (for a model of architecture `arch`) to `path`.
pub fn write_checkpoint(path: &Path, arch: &ModelArch, art: &OfflineArtifacts) -> Result<()> {
    if art.reference.arch_id() != arch.id() {
        return Err(Error::Config("reference model does not match the architecture".into()));
    }
    let mut out = String::new();
    let d = &art.defense;
    let _ = writeln!(out, "# defense checkpoint");
    let _ = writeln!(out, "format_version = {CHECKPOINT_VERSION}");
    let _ = writeln!(out, "arch = {arch}");
    let _ = writeln!(out, "pub_fingerprint = {}", art.pub_fingerprint);
    let _ = writeln!(out, "reference_index = {}", art.reference_index);
    let _ = writeln!(out, "svm.lambda = {}", d.params.lambda);
    let _ = writeln!(out, "svm.eta = {}", d.params.eta);
    let _ = writeln!(out, "svm.epochs = {}", d.params.epochs);
    let _ = writeln!(out, "svm.w = {}", pair(d.w));
    let _ = writeln!(out, "svm.b = {}", d.b);
    let _ = writeln!(out, "svm.mean = {}", pair(d.mean));
    let _ = writeln!(out, "svm.scale = {}", pair(d.scale));
    let _ = writeln!(out, "samples = {}", art.samples.len());
    for (i, (s, attack)) in art.samples.iter().zip(&art.sample_attacks).enumerate() {
        let label = match s.y {
            Identity::Benign => "benign",
            Identity::Malicious => "malicious",
        };
        let attack = attack.map_or("-", AttackKind::name);
        let _ = writeln!(out, "sample.{i} = {} {} {label} {attack}", s.x.mse, s.x.tcd);
    }
    let _ = write!(out, "reference.params =");
    for v in art.reference.values() {
        let _ = write!(out, " {:08x}", v.to_bits());
    }
    out.push('\n');
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Fields<'a> {
    path: &'a Path,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a str> {
        self.map
            .get(key)
            .copied()
            .ok_or_else(|| Error::format(self.path, format!("missing key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::format(self.path, format!("bad value for `{key}`")))
    }

    fn pair(&self, key: &str) -> Result<[f64; 2]> {
        let parts: Vec<f64> = self
            .get(key)?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(self.path, format!("bad value for `{key}`")))?;
        parts
            .try_into()
            .map_err(|_| Error::format(self.path, format!("`{key}` needs two values")))
    }
}

/// Reads a checkpoint written by [`write_checkpoint`], returning the
/// architecture it was built for and the artifacts.
pub fn read_checkpoint(path: &Path) -> Result<(ModelArch, OfflineArtifacts)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("line {} is not `key = value`", n + 1)))?;
        map.insert(k.trim(), v.trim());
    }
    let f = Fields { path, map };
    let bad = |msg: String| Error::format(path, msg);

    let version: u32 = f.parse("format_version")?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let arch: ModelArch = f.get("arch")?.parse().map_err(|e: Error| bad(e.to_string()))?;
    let params = SvmParams {
        lambda: f.parse("svm.lambda")?,
        eta: f.parse("svm.eta")?,
        epochs: f.parse("svm.epochs")?,
    };
    let defense = DefenseModel {
        w: f.pair("svm.w")?,
        b: f.parse("svm.b")?,
        mean: f.pair("svm.mean")?,
        scale: f.pair("svm.scale")?,
        params,
    };
    let count: usize = f.parse("samples")?;
    let mut samples = Vec::with_capacity(count);
    let mut sample_attacks = Vec::with_capacity(count);
    for i in 0..count {
        let key = format!("sample.{i}");
        let parts: Vec<&str> = f.get(&key)?.split_whitespace().collect();
        let [mse, tcd, label, attack] = parts[..] else {
            return Err(bad(format!("`{key}` needs four fields")));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number in `{key}`")));
        let y = match label {
            "benign" => Identity::Benign,
            "malicious" => Identity::Malicious,
            other => return Err(bad(format!("bad label `{other}` in `{key}`"))),
        };
        let attack = match attack {
            "-" => None,
            name => Some(name.parse::<AttackKind>().map_err(|e| bad(e.to_string()))?),
        };
        samples.push(FeatureSample {
            x: Features {
                mse: num(mse)?,
                tcd: num(tcd)?,
            },
            y,
        });
        sample_attacks.push(attack);
    }
    let values: Vec<f32> = f
        .get("reference.params")?
        .split_whitespace()
        .map(|h| u32::from_str_radix(h, 16).map(f32::from_bits))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad hex word in `reference.params`".into()))?;
    if values.len() != arch.param_count() {
        return Err(bad(format!(
            "reference model has {} parameters, architecture needs {}",
            values.len(),
            arch.param_count()
        )));
    }
    let reference = crate::nn::ParamVector::new(values, arch.id());
    let artifacts = OfflineArtifacts {
        reference,
        reference_index: f.parse("reference_index")?,
        defense,
        samples,
        sample_attacks,
        pub_fingerprint: f.parse("pub_fingerprint")?,
    };
    Ok((arch, artifacts))
}
