//! `--grid` flag parsing.
//!
//! Three spellings:
//!   logx:<start>:<end>:<step>    thresholds 1 - 10^-x for x over the range
//!   linear:<start>:<end>:<step>  evenly spaced raw values
//!   list:<v1>,<v2>,...           explicit values, strictly increasing

use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec(pub Vec<f64>);

fn parse_range(parts: &[&str]) -> Result<(f64, f64, f64), String> {
    if parts.len() != 3 {
        return Err("expected <start>:<end>:<step>".into());
    }
    let mut values = [0.0; 3];
    for (slot, part) in values.iter_mut().zip(parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|_| format!("{part:?} is not a number"))?;
    }
    let [start, end, step] = values;
    if !step.is_finite() || step <= 0.0 {
        return Err(format!("step must be positive, got {step}"));
    }
    if !(start.is_finite() && end.is_finite()) || end < start {
        return Err(format!("invalid range {start}..{end}"));
    }
    Ok((start, end, step))
}

fn range_points(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step).round() as usize;
    (0..=count).map(|i| start + step * i as f64).collect()
}

/// 1 - 10^-x; integral exponents land exactly on 1 - 10^-k.
fn one_minus_pow10(x: f64) -> f64 {
    let rounded = x.round();
    let p = if (x - rounded).abs() < 1e-9 {
        10f64.powi(-(rounded as i32))
    } else {
        10f64.powf(-x)
    };
    1.0 - p
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| "expected logx:, linear: or list: prefix".to_string())?;
        let values = match kind {
            "logx" => {
                let (start, end, step) = parse_range(&rest.split(':').collect::<Vec<_>>())?;
                if start <= 0.0 {
                    return Err("logx exponents must be positive".into());
                }
                range_points(start, end, step)
                    .into_iter()
                    .map(one_minus_pow10)
                    .collect()
            }
            "linear" => {
                let (start, end, step) = parse_range(&rest.split(':').collect::<Vec<_>>())?;
                range_points(start, end, step)
            }
            "list" => rest
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| format!("{v:?} is not a number"))
                })
                .collect::<Result<Vec<f64>, String>>()?,
            other => return Err(format!("unknown grid kind {other:?}")),
        };
        if values.is_empty() {
            return Err("empty grid".into());
        }
        for pair in values.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(format!(
                    "grid must be strictly increasing ({} then {})",
                    pair[0], pair[1]
                ));
            }
        }
        Ok(GridSpec(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logx_integer_points_are_exact() {
        let grid: GridSpec = "logx:1:8:1".parse().unwrap();
        assert_eq!(grid.0.len(), 8);
        assert_eq!(grid.0[0], 1.0 - 0.1);
        assert_eq!(grid.0[5], 1.0 - 1e-6);
    }

    #[test]
    fn logx_fractional_steps() {
        let grid: GridSpec = "logx:0.1:13.0:0.1".parse().unwrap();
        assert_eq!(grid.0.len(), 130);
        assert_eq!(grid.0[29], 1.0 - 1e-3);
        assert!(grid.0.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn linear_and_list() {
        let grid: GridSpec = "linear:0:50:10".parse().unwrap();
        assert_eq!(grid.0, vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0]);
        let grid: GridSpec = "list:0.5,0.9,0.99".parse().unwrap();
        assert_eq!(grid.0, vec![0.5, 0.9, 0.99]);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!("".parse::<GridSpec>().is_err());
        assert!("logx:0:5:1".parse::<GridSpec>().is_err());
        assert!("linear:5:0:1".parse::<GridSpec>().is_err());
        assert!("list:3,2".parse::<GridSpec>().is_err());
        assert!("list:1,1".parse::<GridSpec>().is_err());
        assert!("weird:1:2:3".parse::<GridSpec>().is_err());
    }
}
