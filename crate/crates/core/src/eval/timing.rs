//! Wall-clock overhead of an adaptation method relative to a baseline run.

use std::time::Instant;

use crate::error::{Error, Result};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SHIFTKT_THREADS";

/// Worker threads for parallel evaluation: the value of [`THREADS_ENV`]
/// when it parses as a positive integer, otherwise 1.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Overhead {
    /// Median of per-repeat `method − baseline`, floored at 0.
    pub overhead_ms: f64,
    pub method_ms: f64,
    pub baseline_ms: f64,
    pub repeats: usize,
    /// Threads the measured code was allowed; timing runs use one.
    pub threads: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `baseline` and `method` alternately `repeats` times and reports the
/// median difference in milliseconds. Errors from either closure abort the
/// measurement.
pub fn time_overhead<A, B>(mut method: A, mut baseline: B, repeats: usize) -> Result<Overhead>
where
    A: FnMut() -> Result<()>,
    B: FnMut() -> Result<()>,
{
    if repeats < 3 {
        return Err(Error::Contract(format!("timing needs at least 3 repeats, got {repeats}")));
    }
    let time = |f: &mut dyn FnMut() -> Result<()>| -> Result<f64> {
        let start = Instant::now();
        f()?;
        Ok(start.elapsed().as_secs_f64() * 1e3)
    };
    let (mut m, mut b, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..repeats {
        let tb = time(&mut baseline)?;
        let tm = time(&mut method)?;
        b.push(tb);
        m.push(tm);
        d.push(tm - tb);
    }
    Ok(Overhead {
        overhead_ms: median(&d).max(0.0),
        method_ms: median(&m),
        baseline_ms: median(&b),
        repeats,
        threads: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn too_few_repeats() {
        assert!(matches!(
            time_overhead(|| Ok(()), || Ok(()), 2),
            Err(Error::Contract(_))
        ));
    }
}
