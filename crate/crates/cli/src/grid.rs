//! Sweep axes: `key=a:step:b`, `key=v1,v2,...` or the same forms in a
//! `[grid]` table. Points are the cartesian product, last axis fastest.

use crate::scenario::Scenario;
use crate::CliError;
use nads::system_perf::Method;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Num(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

pub const KEYS: &[&str] = &[
    "n", "m", "rho", "sigma_mcc", "eta1", "k", "alpha", "spatial_base", "prior_h1", "vote_m", "g", "sigma_ncc", "nh",
    "method",
];

fn bad(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("grid axis `{key}`: {msg}"))
}

/// Trims float noise from `a + i * step` so 0.2:0.2:1 gives 0.6, not 0.6000000000000001.
fn tidy(x: f64) -> f64 {
    format!("{x:.12e}").parse().unwrap_or(x)
}

fn range(key: &str, spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [a, step, b] = parts[..] else {
        return Err(bad(key, format!("range `{spec}` must be start:step:stop")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(key, format!("`{s}` is not a number")));
    let (a, step, b) = (num(a)?, num(step)?, num(b)?);
    if !(step > 0.0 && step.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(bad(key, format!("range `{spec}` needs a finite positive step")));
    }
    let count = ((b - a) / step + 1e-9).floor();
    if count < 0.0 {
        return Err(bad(key, format!("range `{spec}` is empty")));
    }
    if count > 1e6 {
        return Err(bad(key, format!("range `{spec}` has too many points")));
    }
    Ok((0..=count as usize).map(|i| tidy(a + i as f64 * step)).collect())
}

fn parse_item(key: &str, s: &str) -> Result<Value, CliError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(bad(key, "empty value"));
    }
    Ok(match s.parse::<f64>() {
        Ok(x) => Value::Num(x),
        Err(_) => Value::Text(s.to_string()),
    })
}

fn parse_values(key: &str, spec: &str) -> Result<Vec<Value>, CliError> {
    if spec.contains(':') {
        return Ok(range(key, spec)?.into_iter().map(Value::Num).collect());
    }
    spec.split(',').map(|s| parse_item(key, s)).collect()
}

fn check(axis: Axis) -> Result<Axis, CliError> {
    if !KEYS.contains(&axis.key.as_str()) {
        return Err(bad(&axis.key, format!("unknown key; expected one of {}", KEYS.join(", "))));
    }
    if axis.values.is_empty() {
        return Err(bad(&axis.key, "no values"));
    }
    Ok(axis)
}

/// One `--vary key=spec` argument.
pub fn parse_vary(arg: &str) -> Result<Axis, CliError> {
    let (key, spec) = arg
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--vary `{arg}` must look like key=a:step:b or key=v1,v2")))?;
    let key = key.trim();
    check(Axis { key: key.to_string(), values: parse_values(key, spec)? })
}

fn toml_value(key: &str, v: &toml::Value) -> Result<Vec<Value>, CliError> {
    match v {
        toml::Value::String(s) => parse_values(key, s),
        toml::Value::Integer(i) => Ok(vec![Value::Num(*i as f64)]),
        toml::Value::Float(x) => Ok(vec![Value::Num(*x)]),
        toml::Value::Array(items) => items
            .iter()
            .map(|item| match item {
                toml::Value::Integer(i) => Ok(Value::Num(*i as f64)),
                toml::Value::Float(x) => Ok(Value::Num(*x)),
                toml::Value::String(s) => parse_item(key, s),
                other => Err(bad(key, format!("unsupported list item {other}"))),
            })
            .collect(),
        other => Err(bad(key, format!("unsupported value {other}"))),
    }
}

/// Axes from the scenario's `[grid]` table, in file order.
pub fn from_table(table: &toml::Table) -> Result<Vec<Axis>, CliError> {
    table.iter().map(|(k, v)| check(Axis { key: k.clone(), values: toml_value(k, v)? })).collect()
}

/// File axes followed by command-line axes; a command-line axis replaces a
/// file axis with the same key in place.
pub fn merge(mut file: Vec<Axis>, cli: Vec<Axis>) -> Vec<Axis> {
    for axis in cli {
        match file.iter_mut().find(|a| a.key == axis.key) {
            Some(slot) => *slot = axis,
            None => file.push(axis),
        }
    }
    file
}

fn count(key: &str, v: &Value) -> Result<usize, CliError> {
    match v {
        Value::Num(x) if *x >= 0.0 && x.fract() == 0.0 && *x <= u32::MAX as f64 => Ok(*x as usize),
        _ => Err(bad(key, format!("needs a non-negative integer, got {v:?}"))),
    }
}

fn number(key: &str, v: &Value) -> Result<f64, CliError> {
    match v {
        Value::Num(x) => Ok(*x),
        Value::Text(t) => Err(bad(key, format!("needs a number, got `{t}`"))),
    }
}

pub fn apply(s: &mut Scenario, key: &str, v: &Value) -> Result<(), CliError> {
    match key {
        "n" => s.noise.n = count(key, v)?,
        "m" => s.fusion.m = count(key, v)?,
        "vote_m" => s.fusion.vote_m = count(key, v)?,
        "rho" => s.noise.rho = vec![number(key, v)?],
        "sigma_mcc" => s.fusion.sigma_mcc = number(key, v)?,
        "eta1" => s.detector.eta1 = number(key, v)?,
        "k" => s.abnormality.k = number(key, v)?,
        "alpha" => s.alpha = number(key, v)?,
        "spatial_base" => {
            s.noise.spatial_matrix = None;
            s.noise.spatial_base = Some(number(key, v)?);
        }
        "prior_h1" => s.fusion.prior_h1 = number(key, v)?,
        "g" => s.fusion.g = number(key, v)?,
        "sigma_ncc" => s.abnormality.sigma_ncc = number(key, v)?,
        "nh" => s.abnormality.nh = Some(number(key, v)?),
        "method" => {
            let Value::Text(t) = v else {
                return Err(bad(key, format!("needs a method name, got {v:?}")));
            };
            s.method = serde_json::from_value::<Method>(serde_json::Value::String(t.clone()))
                .map_err(|_| bad(key, format!("unknown method `{t}`")))?;
        }
        _ => return Err(bad(key, "unknown key")),
    }
    Ok(())
}

/// Every grid point in order; a base with no axes is the single point.
pub fn expand(base: &Scenario, axes: &[Axis]) -> Result<Vec<Scenario>, CliError> {
    let mut base = base.clone();
    base.grid = None;
    let mut points = vec![base];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for v in &axis.values {
                let mut q = p.clone();
                apply(&mut q, &axis.key, v)?;
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_inclusive_and_tidy() {
        assert_eq!(range("n", "1:2:9").unwrap(), vec![1.0, 3.0, 5.0, 7.0, 9.0]);
        assert_eq!(range("k", "1.75:0.5:3.25").unwrap(), vec![1.75, 2.25, 2.75, 3.25]);
        assert_eq!(range("s", "0.2:0.2:1").unwrap(), vec![0.2, 0.4, 0.6, 0.8, 1.0]);
        assert_eq!(range("x", "3:1:3").unwrap(), vec![3.0]);
    }

    #[test]
    fn empty_and_malformed_ranges_fail() {
        assert!(range("n", "9:2:1").is_err());
        assert!(range("n", "1:0:9").is_err());
        assert!(range("n", "1:-1:9").is_err());
        assert!(range("n", "1:9").is_err());
        assert!(parse_vary("n").is_err());
        assert!(parse_vary("bogus=1:1:2").is_err());
    }

    #[test]
    fn lists_mix_numbers_and_names() {
        let a = parse_vary("eta1=1e-6,1e-5").unwrap();
        assert_eq!(a.values, vec![Value::Num(1e-6), Value::Num(1e-5)]);
        let a = parse_vary("method=hybrid,lemma2").unwrap();
        assert_eq!(a.values, vec![Value::Text("hybrid".into()), Value::Text("lemma2".into())]);
    }

    #[test]
    fn expansion_runs_last_axis_fastest() {
        let axes = vec![parse_vary("n=1,3").unwrap(), parse_vary("m=1:1:3").unwrap()];
        let pts = expand(&Scenario::default(), &axes).unwrap();
        let got: Vec<(usize, usize)> = pts.iter().map(|p| (p.noise.n, p.fusion.m)).collect();
        assert_eq!(got, vec![(1, 1), (1, 2), (1, 3), (3, 1), (3, 2), (3, 3)]);
    }

    #[test]
    fn integer_keys_reject_fractions() {
        let mut s = Scenario::default();
        assert!(apply(&mut s, "n", &Value::Num(2.5)).is_err());
        assert!(apply(&mut s, "method", &Value::Text("fastest".into())).is_err());
        apply(&mut s, "method", &Value::Text("paper_literal".into())).unwrap();
        assert_eq!(s.method, Method::PaperLiteral);
    }

    #[test]
    fn command_line_axis_replaces_file_axis() {
        let file = vec![parse_vary("n=1,3").unwrap(), parse_vary("m=1:1:3").unwrap()];
        let merged = merge(file, vec![parse_vary("n=9").unwrap(), parse_vary("k=2,3").unwrap()]);
        let keys: Vec<&str> = merged.iter().map(|a| a.key.as_str()).collect();
        assert_eq!(keys, ["n", "m", "k"]);
        assert_eq!(merged[0].values, vec![Value::Num(9.0)]);
    }
}
