//! Fixed names the ingestion pipeline emits. A relation is only emitted when
//! the loaded taxonomy declares its role, so trimming the taxonomy trims the
//! derived graph.

use crate::model::QName;

fn q(s: &str) -> QName {
    QName::parse(s).expect("vocabulary names are well-formed")
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pub is_left_of: QName,
    pub is_right_of: QName,
    pub is_near: QName,
    pub is_in_proximity: QName,
    pub is_occluded_by: QName,
    pub is_part_of: QName,
    pub has_part: QName,
    pub part_height_ratio: QName,
    pub occlusion_rate: QName,
    pub has_color: QName,
    pub detection_confidence: QName,
    pub unknown_object: QName,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            is_left_of: q("phys:is_left_of"),
            is_right_of: q("phys:is_right_of"),
            is_near: q("phys:is_near"),
            is_in_proximity: q("phys:is_in_proximity"),
            is_occluded_by: q("phys:is_occluded_by"),
            is_part_of: q("phys:is_part_of"),
            has_part: q("phys:has_part"),
            part_height_ratio: q("phys:part_height_ratio"),
            occlusion_rate: q("perc:occlusion_rate"),
            has_color: q("phys:has_color"),
            detection_confidence: q("perc:detection_confidence"),
            unknown_object: q("l4_d:Unknown_Object"),
        }
    }
}

/// Named colours for `phys:has_color`; nearest in RGB wins.
pub const PALETTE: &[(&str, [u8; 3])] = &[
    ("phys:Black", [0, 0, 0]),
    ("phys:White", [255, 255, 255]),
    ("phys:Gray", [128, 128, 128]),
    ("phys:Red", [200, 40, 40]),
    ("phys:Green", [40, 160, 70]),
    ("phys:Blue", [40, 70, 200]),
    ("phys:Yellow", [230, 210, 50]),
    ("phys:Orange", [240, 140, 30]),
    ("phys:Brown", [120, 80, 40]),
];

pub fn nearest_color(rgb: [u8; 3]) -> QName {
    let dist = |c: [u8; 3]| -> i32 {
        (0..3)
            .map(|i| {
                let d = i32::from(rgb[i]) - i32::from(c[i]);
                d * d
            })
            .sum()
    };
    let (name, _) = PALETTE
        .iter()
        .min_by_key(|(_, c)| dist(*c))
        .expect("palette is non-empty");
    q(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_lookup() {
        assert_eq!(nearest_color([120, 125, 130]).to_string(), "phys:Gray");
        assert_eq!(nearest_color([250, 250, 245]).to_string(), "phys:White");
        assert_eq!(nearest_color([35, 60, 190]).to_string(), "phys:Blue");
    }
}
