use std::collections::VecDeque;

use super::BinaryMask;

const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Foreground pixels with at least one 4-neighbour that is background or
/// off the grid, in row-major order.
pub fn boundary(mask: &BinaryMask) -> Vec<(usize, usize)> {
    mask.foreground()
        .filter(|&(r, c)| {
            NEIGHBORS_4
                .iter()
                .any(|&(dr, dc)| !mask.get_or_bg(r as isize + dr, c as isize + dc))
        })
        .collect()
}

pub fn boundary_mask(mask: &BinaryMask) -> BinaryMask {
    let mut out = BinaryMask::new(mask.height(), mask.width()).with_spacing(mask.spacing());
    for (r, c) in boundary(mask) {
        out.set(r, c, true);
    }
    out
}

/// 8-connected component labels: 0 is background, components are 1..=count
/// numbered in raster order of their first pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeling {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labeling {
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

pub fn connected_components(mask: &BinaryMask) -> Labeling {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !mask.pixels()[start] || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if mask.get_or_bg(rr, cc) {
                        let j = rr as usize * w + cc as usize;
                        if labels[j] == 0 {
                            labels[j] = count;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    Labeling {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}
