use serde::{Deserialize, Serialize};

use super::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementShape {
    Disk,
    Square,
}

/// A flat, origin-centred structuring element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    shape: ElementShape,
    radius: usize,
    offsets: Vec<(isize, isize)>,
}

impl StructuringElement {
    pub fn new(shape: ElementShape, radius: usize) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        let r = radius as isize;
        let mut offsets = Vec::new();
        for dr in -r..=r {
            for dc in -r..=r {
                let inside = match shape {
                    ElementShape::Square => true,
                    ElementShape::Disk => dr * dr + dc * dc <= r * r,
                };
                if inside {
                    offsets.push((dr, dc));
                }
            }
        }
        Self {
            shape,
            radius,
            offsets,
        }
    }

    pub fn disk(radius: usize) -> Self {
        Self::new(ElementShape::Disk, radius)
    }

    pub fn square(radius: usize) -> Self {
        Self::new(ElementShape::Square, radius)
    }

    pub fn shape(&self) -> ElementShape {
        self.shape
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Offsets `(drow, dcol)` relative to the centre.
    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }
}

/// Erosion with out-of-bounds pixels treated as background.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode_with_border(mask, se, false)
}

/// Erosion where out-of-bounds pixels read as `border`.
///
/// `border = true` is the padding under which erosion is the exact dual of
/// [`dilate`]: `dilate(m) == !erode_with_border(!m, true)`.
pub fn erode_with_border(mask: &BinaryMask, se: &StructuringElement, border: bool) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut out = BinaryMask::new(h, w).with_spacing(mask.spacing());
    for r in 0..h {
        for c in 0..w {
            let keep = se.offsets().iter().all(|&(dr, dc)| {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    border
                } else {
                    mask.get(rr as usize, cc as usize)
                }
            });
            out.set(r, c, keep);
        }
    }
    out
}

/// Dilation: a pixel is set when the reflected element placed there hits
/// the foreground.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut out = BinaryMask::new(h, w).with_spacing(mask.spacing());
    for (r, c) in mask.foreground() {
        for &(dr, dc) in se.offsets() {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                out.set(rr as usize, cc as usize, true);
            }
        }
    }
    out
}

pub fn open(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

pub fn close(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    erode(&dilate(mask, se), se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Set-definition oracles: erosion keeps p iff p + B lies inside X,
    // dilation is the union of X translated by every element of B.
    fn erode_oracle(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
        let (h, w) = m.dims();
        BinaryMask::from_fn(h, w, |r, c| {
            se.offsets()
                .iter()
                .all(|&(dr, dc)| m.get_or_bg(r as isize + dr, c as isize + dc))
        })
    }

    fn dilate_oracle(m: &BinaryMask, se: &StructuringElement) -> BinaryMask {
        let (h, w) = m.dims();
        let mut out = BinaryMask::new(h, w);
        for r in 0..h {
            for c in 0..w {
                for &(dr, dc) in se.offsets() {
                    let (sr, sc) = (r as isize - dr, c as isize - dc);
                    if m.get_or_bg(sr, sc) {
                        out.set(r, c, true);
                    }
                }
            }
        }
        out
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
        let density: f64 = rng.random_range(0.1..0.9);
        BinaryMask::from_fn(h, w, |_, _| rng.random_bool(density))
    }

    #[test]
    fn erode_centered_block_to_point() {
        let m = BinaryMask::from_fn(5, 5, |r, c| (1..=3).contains(&r) && (1..=3).contains(&c));
        let e = erode(&m, &StructuringElement::square(1));
        assert_eq!(e.count(), 1);
        assert!(e.get(2, 2));
        assert_eq!(e, erode_oracle(&m, &StructuringElement::square(1)));
    }

    #[test]
    fn erode_empty_is_empty() {
        let m = BinaryMask::new(7, 6);
        assert!(erode(&m, &StructuringElement::disk(2)).is_empty());
    }

    #[test]
    fn erode_full_mask_loses_frame() {
        let m = BinaryMask::filled(6, 5, true);
        let e = erode(&m, &StructuringElement::square(1));
        let expected = BinaryMask::from_fn(6, 5, |r, c| (1..=4).contains(&r) && (1..=3).contains(&c));
        assert_eq!(e, expected);
        assert_eq!(e, erode_oracle(&m, &StructuringElement::square(1)));
    }

    #[test]
    fn dilate_point_gives_element() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        let d = dilate(&m, &StructuringElement::square(1));
        let expected = BinaryMask::from_fn(5, 5, |r, c| (1..=3).contains(&r) && (1..=3).contains(&c));
        assert_eq!(d, expected);
        assert!(dilate(&BinaryMask::new(5, 5), &StructuringElement::square(2)).is_empty());
    }

    #[test]
    fn dilate_matches_oracle_on_random_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..1000 {
            let m = random_mask(&mut rng, 8, 8);
            let shape = if i % 2 == 0 { ElementShape::Disk } else { ElementShape::Square };
            let se = StructuringElement::new(shape, rng.random_range(1..=3));
            assert_eq!(dilate(&m, &se), dilate_oracle(&m, &se));
        }
    }

    #[test]
    fn disk_radius_one_is_a_cross() {
        let se = StructuringElement::disk(1);
        assert_eq!(se.offsets().len(), 5);
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..12, 1usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |px| BinaryMask::from_vec(h, w, px).unwrap())
        })
    }

    fn arb_se() -> impl Strategy<Value = StructuringElement> {
        (prop_oneof![Just(ElementShape::Disk), Just(ElementShape::Square)], 1usize..4)
            .prop_map(|(s, r)| StructuringElement::new(s, r))
    }

    proptest! {
        #[test]
        fn duality_with_complemented_border(m in arb_mask(), se in arb_se()) {
            let dual = erode_with_border(&m.complement(), &se, true).complement();
            prop_assert_eq!(dilate(&m, &se), dual);
        }

        #[test]
        fn erosion_shrinks_dilation_grows(m in arb_mask(), se in arb_se()) {
            prop_assert!(erode(&m, &se).is_subset_of(&m));
            prop_assert!(m.is_subset_of(&dilate(&m, &se)));
        }

        #[test]
        fn opening_and_closing_are_idempotent(m in arb_mask(), se in arb_se()) {
            let o = open(&m, &se);
            prop_assert_eq!(open(&o, &se), o);
            let c = close(&m, &se);
            prop_assert_eq!(close(&c, &se), c);
        }
    }
}
