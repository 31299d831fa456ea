//! Heatmap rendering and overlays.

use infoattr_core::{AttributionMap, Image};

use crate::error::Result;

/// How map values become colors.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Colormap {
    /// Blue (negative) → white (zero) → red (positive), scaled by max |v|.
    Diverging,
    /// Black (zero) → white (max), scaled by the maximum; negatives are black.
    Sequential,
}

impl Colormap {
    /// Diverging for signed maps, sequential for IG.
    pub fn for_map(map: &AttributionMap) -> Self {
        if *map.kind() == infoattr_core::MapKind::Ig {
            Colormap::Sequential
        } else {
            Colormap::Diverging
        }
    }
}

/// Rounds half up, e.g. 127.5 → 128.
fn to_byte(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// RGB rendering of a map at its own resolution.
pub fn render_heatmap(map: &AttributionMap, colormap: Colormap) -> Image {
    let mut data = Vec::with_capacity(map.values().len() * 3);
    match colormap {
        Colormap::Diverging => {
            let scale = map.max_abs();
            for &v in map.values() {
                let t = if scale > 0.0 { (v.abs() / scale).min(1.0) } else { 0.0 };
                let fade = to_byte(255.0 * (1.0 - t));
                if v > 0.0 {
                    data.extend([255, fade, fade]);
                } else if v < 0.0 {
                    data.extend([fade, fade, 255]);
                } else {
                    data.extend([255, 255, 255]);
                }
            }
        }
        Colormap::Sequential => {
            let max = map.values().iter().fold(0.0f64, |m, &v| m.max(v));
            for &v in map.values() {
                let g = if max > 0.0 && v > 0.0 { to_byte(255.0 * (v / max).min(1.0)) } else { 0 };
                data.extend([g, g, g]);
            }
        }
    }
    Image::new(map.height(), map.width(), 3, data).expect("shape matches map")
}

/// Per-channel blend `round(alpha·heat + (1−alpha)·base)`; a grayscale base
/// is replicated to RGB.
pub fn overlay(base: &Image, heat: &Image, alpha: f64) -> Result<Image> {
    use infoattr_core::Error;
    if base.height() != heat.height() || base.width() != heat.width() {
        return Err(Error::InvalidArgument(format!(
            "overlay of {}x{} heat on {}x{} image",
            heat.height(),
            heat.width(),
            base.height(),
            base.width()
        ))
        .into());
    }
    if heat.channels() != 3 {
        return Err(Error::InvalidArgument("heat image must be RGB".into()).into());
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")).into());
    }
    Ok(Image::from_fn(base.height(), base.width(), 3, |r, c, k| {
        let b = base.pixel(r, c)[if base.channels() == 1 { 0 } else { k }];
        let h = heat.pixel(r, c)[k];
        to_byte(alpha * f64::from(h) + (1.0 - alpha) * f64::from(b))
    })?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use infoattr_core::{MapKind, MapMeta};
    use proptest::prelude::*;

    fn map(values: Vec<f64>, kind: MapKind) -> AttributionMap {
        AttributionMap::new(kind, 1, values.len(), values, MapMeta::default()).unwrap()
    }

    #[test]
    fn zero_map_is_white() {
        let img = render_heatmap(&map(vec![0.0; 4], MapKind::Pmi { class: 0 }), Colormap::Diverging);
        assert!(img.data().iter().all(|&v| v == 255));
    }

    #[test]
    fn diverging_endpoints() {
        let img = render_heatmap(&map(vec![-1.0, 0.0, 1.0], MapKind::Pmi { class: 0 }), Colormap::Diverging);
        assert_eq!(img.data(), &[0, 0, 255, 255, 255, 255, 255, 0, 0]);
    }

    #[test]
    fn sequential_midpoint_rounds_half_up() {
        let img = render_heatmap(&map(vec![0.0, 1.0, 2.0], MapKind::Ig), Colormap::Sequential);
        assert_eq!(img.pixel(0, 1), &[128, 128, 128]);
        assert_eq!(img.pixel(0, 0), &[0, 0, 0]);
        assert_eq!(img.pixel(0, 2), &[255, 255, 255]);
    }

    #[test]
    fn overlay_blend_rule() {
        let base = Image::filled(2, 2, 1, 0).unwrap();
        let heat = Image::filled(2, 2, 3, 255).unwrap();
        assert_eq!(overlay(&base, &heat, 0.0).unwrap(), Image::filled(2, 2, 3, 0).unwrap());
        assert_eq!(overlay(&base, &heat, 1.0).unwrap(), heat);
        assert_eq!(overlay(&base, &heat, 0.5).unwrap(), Image::filled(2, 2, 3, 128).unwrap());
        assert!(overlay(&Image::filled(3, 2, 1, 0).unwrap(), &heat, 0.5).is_err());
    }

    proptest! {
        #[test]
        fn diverging_is_monotone_and_zero_neutral(
            mut vals in prop::collection::vec(-100.0f64..100.0, 2..40),
            scale in 0.001f64..1000.0,
        ) {
            vals.push(0.0);
            let vals: Vec<f64> = vals.iter().map(|v| v * scale).collect();
            let img = render_heatmap(&map(vals.clone(), MapKind::Pmi { class: 0 }), Colormap::Diverging);
            let px = |i: usize| img.pixel(0, i).to_vec();
            prop_assert_eq!(px(vals.len() - 1), vec![255, 255, 255]);
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    let (a, b) = (vals[i], vals[j]);
                    // redness = 255 − green on the positive arm
                    if a > 0.0 && b > a {
                        prop_assert!(px(j)[1] <= px(i)[1]);
                    }
                    if a < 0.0 && b < a {
                        prop_assert!(px(j)[0] <= px(i)[0]);
                    }
                }
            }
        }
    }
}
