//! Enumeration budget. `COGROWTH_LAB_BUDGET` caps the number of objects any
//! single enumeration is allowed to materialize.

const DEFAULT_CAP: u64 = 200_000_000;

pub fn enumeration_cap() -> u64 {
    match std::env::var("COGROWTH_LAB_BUDGET") {
        Ok(v) => v.parse().unwrap_or(DEFAULT_CAP),
        Err(_) => DEFAULT_CAP,
    }
}
