//! Phone-context snapshots and their mapping to numeric features.
//!
//! Numeric sensors are binned by cut-offs, the weather description is mapped
//! through a fixed text table, and positions are geofenced into zone codes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::EpochMs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensor {
    BatteryAdaptor,
    BatteryLevel,
    Speed,
    DeviceOff,
    DeviceOn,
    AirPressure,
    WeatherTemperature,
    Weather,
    WindDegrees,
    WindSpeed,
    ScreenStatus,
    Location,
}

impl Sensor {
    pub const ALL: [Sensor; 12] = [
        Sensor::BatteryAdaptor,
        Sensor::BatteryLevel,
        Sensor::Speed,
        Sensor::DeviceOff,
        Sensor::DeviceOn,
        Sensor::AirPressure,
        Sensor::WeatherTemperature,
        Sensor::Weather,
        Sensor::WindDegrees,
        Sensor::WindSpeed,
        Sensor::ScreenStatus,
        Sensor::Location,
    ];

    /// Feature column name.
    pub fn name(self) -> &'static str {
        CONTEXT_FEATURES[self.index()]
    }

    pub fn index(self) -> usize {
        Sensor::ALL.iter().position(|s| *s == self).unwrap_or(0)
    }
}

/// Context feature columns, in matrix order.
pub const CONTEXT_FEATURES: [&str; 12] = [
    "battery_adaptor",
    "battery_level",
    "speed",
    "device_off",
    "device_on",
    "air_pressure",
    "weather_temperature",
    "weather",
    "wind_degrees",
    "wind_speed",
    "screen_status",
    "location",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Number(f64),
    Text(String),
    Location(GeoPoint),
}

/// One raw phone-sensor event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub user_id: String,
    #[serde(rename = "timestamp_ms")]
    pub timestamp: EpochMs,
    pub sensor: Sensor,
    pub payload: Payload,
}

impl ContextSnapshot {
    pub fn new(user_id: &str, timestamp: EpochMs, sensor: Sensor, payload: Payload) -> Self {
        Self {
            user_id: user_id.into(),
            timestamp,
            sensor,
            payload,
        }
    }

    /// Whether the payload kind matches what the sensor reports.
    pub fn is_well_typed(&self) -> bool {
        matches!(
            (self.sensor, &self.payload),
            (Sensor::Weather, Payload::Text(_))
                | (Sensor::Location, Payload::Location(_))
                | (
                    Sensor::BatteryAdaptor
                        | Sensor::BatteryLevel
                        | Sensor::Speed
                        | Sensor::DeviceOff
                        | Sensor::DeviceOn
                        | Sensor::AirPressure
                        | Sensor::WeatherTemperature
                        | Sensor::WindDegrees
                        | Sensor::WindSpeed
                        | Sensor::ScreenStatus,
                    Payload::Number(_)
                )
        )
    }
}

/// Circular geofence. Codes: 0 recreation center, 1 university premises,
/// 2 housing; 3 is reserved for "outside".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoZone {
    pub code: u8,
    pub lat: f64,
    pub lon: f64,
    pub radius_m: f64,
}

pub const OUTSIDE_ZONE: u8 = 3;

/// Cut-offs, weather table and zones used to turn snapshots into features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSchema {
    pub battery_level: Vec<f64>,
    pub speed: Vec<f64>,
    pub device_off: Vec<f64>,
    pub device_on: Vec<f64>,
    pub air_pressure: Vec<f64>,
    pub weather_temperature: Vec<f64>,
    pub wind_degrees: Vec<f64>,
    pub wind_speed: Vec<f64>,
    pub weather: Vec<(String, u8)>,
    pub zones: Vec<GeoZone>,
}

impl Default for ContextSchema {
    fn default() -> Self {
        Self {
            battery_level: vec![10.0, 25.0, 50.0],
            speed: vec![0.0, 1.0, 5.0],
            device_off: vec![2.0, 10.0, 20.0, 60.0, 180.0, 540.0],
            device_on: vec![2.0, 10.0, 20.0],
            air_pressure: vec![900.0, 1000.0, 1100.0],
            weather_temperature: vec![5.0, 10.0, 20.0, 30.0],
            wind_degrees: vec![45.0, 90.0, 135.0],
            wind_speed: vec![0.0, 2.0, 5.0, 10.0],
            weather: ["clear", "mist", "clouds", "rain", "snow"]
                .iter()
                .enumerate()
                .map(|(i, k)| ((*k).into(), i as u8))
                .collect(),
            zones: default_zones(),
        }
    }
}

/// 300 m zones around a campus-like layout.
pub fn default_zones() -> Vec<GeoZone> {
    vec![
        GeoZone {
            code: 0,
            lat: 33.6433,
            lon: -117.8275,
            radius_m: 300.0,
        },
        GeoZone {
            code: 1,
            lat: 33.6405,
            lon: -117.8443,
            radius_m: 300.0,
        },
        GeoZone {
            code: 2,
            lat: 33.6470,
            lon: -117.8370,
            radius_m: 300.0,
        },
    ]
}

impl ContextSchema {
    fn cutoffs(&self, sensor: Sensor) -> Option<&[f64]> {
        Some(match sensor {
            Sensor::BatteryLevel => &self.battery_level,
            Sensor::Speed => &self.speed,
            Sensor::DeviceOff => &self.device_off,
            Sensor::DeviceOn => &self.device_on,
            Sensor::AirPressure => &self.air_pressure,
            Sensor::WeatherTemperature => &self.weather_temperature,
            Sensor::WindDegrees => &self.wind_degrees,
            Sensor::WindSpeed => &self.wind_speed,
            _ => return None,
        })
    }

    /// Cut-off lists strictly increasing and non-empty, weather codes
    /// distinct, zone radii positive.
    pub fn is_valid(&self) -> bool {
        let increasing = Sensor::ALL.iter().filter_map(|s| self.cutoffs(*s)).all(|c| {
            !c.is_empty() && c.windows(2).all(|w| w[0] < w[1])
        });
        let mut codes: Vec<u8> = self.weather.iter().map(|(_, c)| *c).collect();
        codes.sort_unstable();
        let injective = codes.windows(2).all(|w| w[0] != w[1]);
        let zones = self.zones.iter().all(|z| z.radius_m > 0.0 && z.code < OUTSIDE_ZONE);
        increasing && injective && zones
    }
}

/// Number of cut-offs strictly below `value`; `None` for NaN.
pub fn discretize(value: f64, cutoffs: &[f64]) -> Option<u32> {
    if value.is_nan() {
        return None;
    }
    Some(cutoffs.iter().filter(|c| value > **c).count() as u32)
}

/// Case-insensitive lookup in the weather table.
pub fn map_weather(text: &str, table: &[(String, u8)]) -> Option<u8> {
    let t = text.trim();
    table
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(t))
        .map(|(_, c)| *c)
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let s = libm::sin(dp / 2.0);
    let t = libm::sin(dl / 2.0);
    let h = s * s + libm::cos(p1) * libm::cos(p2) * t * t;
    2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Lowest code among zones containing the point, else [`OUTSIDE_ZONE`].
pub fn assign_location(lat: f64, lon: f64, zones: &[GeoZone]) -> u8 {
    zones
        .iter()
        .filter(|z| haversine_m(lat, lon, z.lat, z.lon) <= z.radius_m)
        .map(|z| z.code)
        .min()
        .unwrap_or(OUTSIDE_ZONE)
}

/// Context features of one window; `None` marks a missing value.
pub type ContextFeatures = [Option<f64>; 12];

/// Reduces a window's snapshots to one value per feature, taking the last
/// snapshot of each sensor.
pub fn extract_context_features(snapshots: &[ContextSnapshot], schema: &ContextSchema) -> ContextFeatures {
    let mut last: [Option<&ContextSnapshot>; 12] = [None; 12];
    for s in snapshots {
        let slot = &mut last[s.sensor.index()];
        if slot.is_none_or(|prev| s.timestamp >= prev.timestamp) {
            *slot = Some(s);
        }
    }
    let mut out: ContextFeatures = [None; 12];
    for (i, snap) in last.iter().enumerate() {
        if let Some(s) = snap {
            out[i] = feature_value(s, schema);
        }
    }
    out
}

fn feature_value(s: &ContextSnapshot, schema: &ContextSchema) -> Option<f64> {
    match (s.sensor, &s.payload) {
        (Sensor::BatteryAdaptor | Sensor::ScreenStatus, Payload::Number(v)) if v.is_finite() => Some(*v),
        (Sensor::Weather, Payload::Text(t)) => map_weather(t, &schema.weather).map(f64::from),
        (Sensor::Location, Payload::Location(p)) if p.lat.is_finite() && p.lon.is_finite() => {
            Some(f64::from(assign_location(p.lat, p.lon, &schema.zones)))
        }
        (sensor, Payload::Number(v)) => {
            let cut = schema.cutoffs(sensor)?;
            discretize(*v, cut).map(f64::from)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_example_bins() {
        let c = [10.0, 25.0, 50.0];
        assert_eq!(discretize(30.0, &c), Some(2));
        assert_eq!(discretize(10.0, &c), Some(0));
        assert_eq!(discretize(10.5, &c), Some(1));
        assert_eq!(discretize(25.0, &c), Some(1));
        assert_eq!(discretize(50.0, &c), Some(2));
        assert_eq!(discretize(72.0, &c), Some(3));
        assert_eq!(discretize(f64::NAN, &c), None);
    }

    #[test]
    fn wind_speed_bins() {
        assert_eq!(discretize(7.0, &[0.0, 2.0, 5.0, 10.0]), Some(3));
        assert_eq!(discretize(0.0, &[0.0, 1.0, 5.0]), Some(0));
    }

    #[test]
    fn weather_table() {
        let s = ContextSchema::default();
        assert_eq!(map_weather("clear", &s.weather), Some(0));
        assert_eq!(map_weather("Snow", &s.weather), Some(4));
        assert_eq!(map_weather("CLOUDS", &s.weather), Some(2));
        assert_eq!(map_weather("drizzle", &s.weather), None);
    }

    #[test]
    fn location_codes() {
        let zones = default_zones();
        assert_eq!(assign_location(zones[0].lat, zones[0].lon, &zones), 0);
        // ~10 km north of everything
        assert_eq!(assign_location(33.74, -117.83, &zones), 3);
    }

    #[test]
    fn overlapping_zones_take_lowest_code() {
        let zones = [
            GeoZone { code: 2, lat: 10.0, lon: 10.0, radius_m: 500.0 },
            GeoZone { code: 1, lat: 10.001, lon: 10.0, radius_m: 500.0 },
        ];
        assert_eq!(assign_location(10.0005, 10.0, &zones), 1);
    }

    #[test]
    fn haversine_one_degree_latitude() {
        let d = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111_195.0).abs() < 10.0, "{d}");
    }

    #[test]
    fn extraction_uses_last_snapshot_and_passthrough() {
        let s = ContextSchema::default();
        let snaps = [
            ContextSnapshot::new("u", 1, Sensor::BatteryLevel, Payload::Number(5.0)),
            ContextSnapshot::new("u", 2, Sensor::BatteryLevel, Payload::Number(72.0)),
            ContextSnapshot::new("u", 3, Sensor::ScreenStatus, Payload::Number(2.0)),
        ];
        let f = extract_context_features(&snaps, &s);
        assert_eq!(f[Sensor::BatteryLevel.index()], Some(3.0));
        assert_eq!(f[Sensor::ScreenStatus.index()], Some(2.0));
        assert_eq!(f[Sensor::Weather.index()], None);
    }

    #[test]
    fn mistyped_payload_is_missing() {
        let s = ContextSchema::default();
        let snaps = [ContextSnapshot::new("u", 1, Sensor::Speed, Payload::Text("fast".into()))];
        assert!(!snaps[0].is_well_typed());
        assert_eq!(extract_context_features(&snaps, &s)[Sensor::Speed.index()], None);
    }

    #[test]
    fn default_schema_valid() {
        let mut s = ContextSchema::default();
        assert!(s.is_valid());
        s.speed = vec![1.0, 1.0];
        assert!(!s.is_valid());
    }

    #[test]
    fn names_line_up() {
        for s in Sensor::ALL {
            assert_eq!(s.name(), CONTEXT_FEATURES[s.index()]);
        }
        assert_eq!(Sensor::Location.name(), "location");
    }
}
