//! dB / dBm / linear conversions, kept in one place so every module agrees
//! on the same definitions.

/// Converts a power in dBm to milliwatts. `-inf` dBm maps to 0 mW, which
/// makes "switched off" transmitters drop out of interference sums.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    if dbm == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(dbm / 10.0)
    }
}

/// Converts a power in milliwatts to dBm. Zero maps to `-inf`.
pub fn mw_to_dbm(mw: f64) -> f64 {
    if mw <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * mw.log10()
    }
}

/// Converts a dB ratio to a linear ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear ratio to dB. Zero maps to `-inf`.
pub fn linear_to_db(linear: f64) -> f64 {
    if linear <= 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * linear.log10()
    }
}
