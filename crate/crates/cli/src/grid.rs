use anyhow::{bail, Context, Result};

/// Counts accept scientific notation: `1e6`, `2.5e4`.
pub fn parse_count(s: &str) -> Result<u64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !(v >= 0.0) || v.fract() != 0.0 || v > 9.0e15 {
        return Err(format!("not a nonnegative integer: {s:?}"));
    }
    Ok(v as u64)
}

/// `a:b` (unit step, inclusive), `a:b:step` or `v1,v2,...`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let num = |t: &str| t.trim().parse::<f64>().with_context(|| format!("bad number {t:?} in grid {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => s.split(',').map(num).collect(),
        2 | 3 => {
            let (a, b) = (num(parts[0])?, num(parts[1])?);
            let step = if parts.len() == 3 { num(parts[2])? } else { 1.0 };
            if !(step > 0.0) || b < a {
                bail!("grid {s:?} needs a <= b and a positive step");
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + step * i as f64).collect())
        }
        _ => bail!("cannot parse grid {s:?}"),
    }
}

pub fn parse_int_grid(s: &str) -> Result<Vec<i64>> {
    parse_grid(s)?
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 {
                bail!("grid {s:?} must hold integers");
            }
            Ok(v as i64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_grid("1:4").unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(parse_grid("0:1:0.5").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0,1,5,20").unwrap(), vec![0.0, 1.0, 5.0, 20.0]);
        assert_eq!(parse_int_grid("1:10").unwrap().len(), 10);
        assert!(parse_grid("3:1").is_err());
        assert!(parse_int_grid("0:1:0.5").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e6").unwrap(), 1_000_000);
        assert_eq!(parse_count("250").unwrap(), 250);
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-3").is_err());
    }
}
