use serde::{Deserialize, Serialize};

/// Mean Earth radius in km.
const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in km between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Nominal voltage levels; a bus and a location are compatible when both
/// round to the same level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageClasses {
    pub levels_kv: Vec<f64>,
}

impl Default for VoltageClasses {
    fn default() -> Self {
        VoltageClasses {
            levels_kv: vec![
                20.0, 45.0, 63.0, 90.0, 150.0, 225.0, 400.0, 69.0, 115.0, 138.0, 161.0, 230.0, 345.0,
                500.0, 765.0,
            ],
        }
    }
}

impl VoltageClasses {
    /// Index of the nearest standard level (ties go to the lower level).
    pub fn class_of(&self, kv: f64) -> usize {
        let mut best = (usize::MAX, f64::INFINITY, f64::INFINITY);
        for (i, &level) in self.levels_kv.iter().enumerate() {
            let d = (level - kv).abs();
            if d < best.1 || (d == best.1 && level < best.2) {
                best = (i, d, level);
            }
        }
        best.0
    }

    pub fn compatible(&self, a_kv: f64, b_kv: f64) -> bool {
        self.class_of(a_kv) == self.class_of(b_kv)
    }
}
