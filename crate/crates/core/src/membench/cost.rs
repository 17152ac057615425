use crate::error::{Error, Result};

/// Methods with a closed-form space cost in `n` sampled frames, `m`
/// temporal sub-videos and `v` videos per batch.
pub const METHODS: &[&str] = &["SAVA", "STCDA", "TCoN", "ABG", "LCMCF", "Ours"];

/// Abstract space units of `method`; names are matched case-insensitively.
pub fn analytic_cost(method: &str, n: u64, m: u64, v: u64) -> Result<u128> {
    if n == 0 || m == 0 || v == 0 {
        return Err(Error::Precondition("n, m and v must all be >= 1".into()));
    }
    let (n, m, v) = (u128::from(n), u128::from(m), u128::from(v));
    match method.to_ascii_lowercase().as_str() {
        "sava" | "stcda" | "tcon" => Ok(n * m * m * v),
        "abg" => Ok(n * n * v * v),
        "lcmcf" => Ok(n * v * v),
        "ours" => Ok(n * v),
        _ => Err(Error::Config(format!(
            "unknown cost model `{method}` (known: {})",
            METHODS.join(", ")
        ))),
    }
}
