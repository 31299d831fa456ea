//! The `infoattr-map-v1` JSON map format and CSV curve export.

use std::fmt::Write as _;
use std::path::Path;

use infoattr_core::eval::PerturbationCurve;
use infoattr_core::{AttributionMap, MapKind, MapMeta};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::fsutil::{read, write_atomic};

pub const MAP_FORMAT: &str = "infoattr-map-v1";

/// 17 significant digits: enough to round-trip any f64 exactly.
fn push_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

/// Serializes a map. Values are written in scientific notation with 17
/// significant digits.
pub fn map_to_json(map: &AttributionMap) -> Result<String> {
    if let Some(i) = map.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::format(format!("map value {i} is not finite")));
    }
    let mut out = String::new();
    out.push_str("{\n");
    writeln!(out, "  \"format\": \"{MAP_FORMAT}\",").unwrap();
    writeln!(out, "  \"kind\": \"{}\",", map.kind().tag()).unwrap();
    if let Some(c) = map.kind().class() {
        writeln!(out, "  \"class\": {c},").unwrap();
    }
    writeln!(out, "  \"height\": {},", map.height()).unwrap();
    writeln!(out, "  \"width\": {},", map.width()).unwrap();
    let meta = serde_json::to_string(map.meta()).map_err(|e| Error::format(e.to_string()))?;
    writeln!(out, "  \"meta\": {meta},").unwrap();
    out.push_str("  \"values\": [");
    for (i, &v) in map.values().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_real(&mut out, v);
    }
    out.push_str("]\n}\n");
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapRecord {
    format: String,
    kind: String,
    class: Option<usize>,
    height: usize,
    width: usize,
    meta: MapMeta,
    values: Vec<f64>,
}

pub fn map_from_json(text: &str) -> Result<AttributionMap> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::format(format!("map JSON: {e}")))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MAP_FORMAT) => {}
        Some(other) => return Err(Error::format(format!("unsupported map format {other:?}, expected {MAP_FORMAT:?}"))),
        None => return Err(Error::format("map JSON lacks a format tag")),
    }
    let rec: MapRecord =
        serde_json::from_value(value).map_err(|e| Error::format(format!("map JSON: {e}")))?;
    debug_assert_eq!(rec.format, MAP_FORMAT);
    let need_class = || rec.class.ok_or_else(|| Error::format(format!("{} map needs a class", rec.kind)));
    let kind = match rec.kind.as_str() {
        "pmi" => MapKind::Pmi { class: need_class()? },
        "occlusion" => MapKind::Occlusion { class: need_class()? },
        "pda" => MapKind::Pda { class: need_class()? },
        "ig" => MapKind::Ig,
        "custom" => MapKind::Custom,
        other => return Err(Error::format(format!("unknown map kind {other:?}"))),
    };
    AttributionMap::new(kind, rec.height, rec.width, rec.values, rec.meta)
        .map_err(|e| Error::format(e.to_string()))
}

pub fn save_map(map: &AttributionMap, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, map_to_json(map)?.as_bytes())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<AttributionMap> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::format(format!("{} is not UTF-8", path.display())))?;
    map_from_json(text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// `fraction,probability` rows with a header line.
pub fn curve_to_csv(curve: &PerturbationCurve) -> String {
    let mut out = String::from("fraction,probability\n");
    for (f, p) in curve.fractions.iter().zip(&curve.probabilities) {
        writeln!(out, "{f},{p}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_map() -> AttributionMap {
        let meta = MapMeta {
            k: 8,
            n: 8,
            stride: 8,
            eps: 1e-13,
            seed: 42,
            sampler: "empirical:K8".into(),
            classifier: "linear".into(),
        };
        let values = vec![0.1, -2.5e-300, 1.0 / 3.0, f64::MAX, -0.0, 5e-324];
        AttributionMap::new(MapKind::Pmi { class: 3 }, 2, 3, values, meta).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = sample_map();
        let text = map_to_json(&m).unwrap();
        let back = map_from_json(&text).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.values().iter().zip(m.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(map_to_json(&back).unwrap(), text);
    }

    #[test]
    fn wrong_tag_and_missing_fields_rejected() {
        let text = map_to_json(&sample_map()).unwrap();
        let v0 = text.replace(MAP_FORMAT, "infoattr-map-v0");
        assert!(map_from_json(&v0).unwrap_err().to_string().contains("infoattr-map-v0"));
        let no_width = text.replace("  \"width\": 3,\n", "");
        assert!(matches!(map_from_json(&no_width), Err(Error::Format(_))));
        let no_class = text.replace("  \"class\": 3,\n", "");
        assert!(matches!(map_from_json(&no_class), Err(Error::Format(_))));
        let bad_len = text.replace("\"height\": 2", "\"height\": 3");
        assert!(matches!(map_from_json(&bad_len), Err(Error::Format(_))));
        assert!(matches!(map_from_json("[1,2]"), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_values_cannot_be_saved() {
        // a map holding NaN cannot even be constructed
        assert!(AttributionMap::custom(1, 1, vec![f64::NAN]).is_err());
        let text = map_to_json(&sample_map()).unwrap().replace("1.0000000000000001e-1", "NaN");
        assert!(map_from_json(&text).is_err());
    }

    #[test]
    fn curve_csv_layout() {
        let c = PerturbationCurve {
            class: 1,
            order: infoattr_core::eval::RemovalOrder::Descending,
            fractions: vec![0.0, 1.0],
            probabilities: vec![0.75, 0.25],
        };
        assert_eq!(curve_to_csv(&c), "fraction,probability\n0,0.75\n1,0.25\n");
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..30)) {
            let m = AttributionMap::custom(1, vals.len(), vals).unwrap();
            let back = map_from_json(&map_to_json(&m).unwrap()).unwrap();
            for (a, b) in back.values().iter().zip(m.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
