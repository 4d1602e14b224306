use std::fmt;

use crate::error::{Error, Result};
use crate::labels::{LabelMap, IGNORE_INDEX};

/// Cityscapes `labelId -> trainId` for the 19 evaluation classes.
pub const CITYSCAPES_LABEL_TO_TRAIN: [(u8, u8); 19] = [
    (7, 0),
    (8, 1),
    (11, 2),
    (12, 3),
    (13, 4),
    (17, 5),
    (19, 6),
    (20, 7),
    (21, 8),
    (22, 9),
    (23, 10),
    (24, 11),
    (25, 12),
    (26, 13),
    (27, 14),
    (28, 15),
    (31, 16),
    (32, 17),
    (33, 18),
];

pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// A total map from raw label ids to evaluation ids.
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMapping {
    name: String,
    table: [u8; 256],
}

impl fmt::Debug for LabelMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LabelMapping({})", self.name)
    }
}

impl LabelMapping {
    pub fn identity() -> Self {
        let mut table = [0u8; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        LabelMapping {
            name: "identity".into(),
            table,
        }
    }

    pub fn cityscapes() -> Self {
        let mut m = LabelMapping::from_pairs(&CITYSCAPES_LABEL_TO_TRAIN);
        m.name = "cityscapes".into();
        m
    }

    /// Listed ids map as given; everything else maps to 255.
    pub fn from_pairs(pairs: &[(u8, u8)]) -> Self {
        let mut table = [IGNORE_INDEX; 256];
        for &(raw, train) in pairs {
            table[usize::from(raw)] = train;
        }
        let name = pairs.iter().map(|(r, t)| format!("{r}:{t}")).collect::<Vec<_>>().join(",");
        LabelMapping { name, table }
    }

    /// `identity`, `cityscapes`, or a list of `raw:train` pairs separated by
    /// commas.
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(LabelMapping::identity()),
            "cityscapes" => Ok(LabelMapping::cityscapes()),
            list => {
                let pairs = list
                    .split(',')
                    .map(|pair| {
                        let (r, t) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::Argument(format!("mapping entry `{pair}` is not raw:train")))?;
                        let parse = |v: &str| {
                            v.trim()
                                .parse::<u8>()
                                .map_err(|_| Error::Argument(format!("mapping id `{v}` is not in 0..=255")))
                        };
                        Ok((parse(r)?, parse(t)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LabelMapping::from_pairs(&pairs))
            }
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn map(&self, raw: u8) -> u8 {
        self.table[usize::from(raw)]
    }
}

/// Substitute every pixel through `mapping`.
pub fn map_label_ids(raw: &LabelMap, mapping: &LabelMapping) -> LabelMap {
    let labels = raw.labels().iter().map(|&v| mapping.map(v)).collect();
    LabelMap::new(raw.width(), raw.height(), labels).expect("same dims")
}
