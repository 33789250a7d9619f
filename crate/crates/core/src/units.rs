//! Decibel/linear conversions, kept in one place so the `kappa` factor
//! (natural-log per dB) is written exactly once.

/// Natural-log units per dB: `kappa = 0.1 * ln(10)`.
///
/// A power of `P` dBW equals `e^{kappa * P}` watts, and a log-normal gain
/// whose natural-log has mean `mu` and std `s` reads `mu / KAPPA` dB mean,
/// `s / KAPPA` dB std.
pub const KAPPA: f64 = 0.23025850929940457;

/// dB value of a positive linear ratio.
pub fn lin_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Linear ratio of a dB value.
pub fn db_to_lin(x_db: f64) -> f64 {
    10f64.powf(0.1 * x_db)
}

/// Watts of a dBW power.
pub fn dbw_to_watts(p_dbw: f64) -> f64 {
    db_to_lin(p_dbw)
}

/// dBW of a positive power in watts.
pub fn watts_to_dbw(p_w: f64) -> f64 {
    lin_to_db(p_w)
}
