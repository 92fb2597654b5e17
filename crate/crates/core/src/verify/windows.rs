use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive, 1-based rectangle over a feature map grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Window {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Window {
    pub fn cells(&self) -> usize {
        (self.row1 - self.row0 + 1) * (self.col1 - self.col0 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSet {
    pub height: usize,
    pub width: usize,
    pub windows: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Window> {
        self.windows.iter()
    }
}

/// Number of distinct axis-aligned rectangles in an `h × w` grid.
pub fn distinct_window_count(h: usize, w: usize) -> usize {
    h * (h + 1) / 2 * (w * (w + 1) / 2)
}

/// Multi-scale overlapping window layout.
///
/// Scales are visited in order: the three regional scales with sides
/// `H`, `ceil(2H/3)` and `ceil(H/2)` (same for `W`), then every remaining
/// square-ish side from the largest down to 1, then any remaining
/// rectangle shape by decreasing area. Each scale contributes all of its
/// stride-1 placements in row-major order and the layout is cut off once
/// `target` windows have been emitted. On a 7×7 grid the first five scales
/// (sides 7, 5, 4, 6, 3) give exactly 55 windows.
pub fn generate_windows(h: usize, w: usize, target: usize) -> Result<WindowSet> {
    if h == 0 || w == 0 {
        return Err(Error::domain("window grid must be at least 1×1"));
    }
    if target == 0 {
        return Err(Error::domain("window target must be at least 1"));
    }
    let possible = distinct_window_count(h, w);
    if target > possible {
        return Err(Error::domain(format!(
            "{target} windows requested but a {h}×{w} grid has only {possible} distinct windows"
        )));
    }

    let mut scales: Vec<(usize, usize)> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |s: (usize, usize), scales: &mut Vec<(usize, usize)>| {
        if seen.insert(s) {
            scales.push(s);
        }
    };
    let regional = [
        (h, w),
        ((2 * h).div_ceil(3), (2 * w).div_ceil(3)),
        (h.div_ceil(2), w.div_ceil(2)),
    ];
    for s in regional {
        push(s, &mut scales);
    }
    for side in (1..=h.max(w)).rev() {
        push((side.min(h), side.min(w)), &mut scales);
    }
    let mut rest: Vec<(usize, usize)> = (1..=h)
        .flat_map(|sh| (1..=w).map(move |sw| (sh, sw)))
        .collect();
    rest.sort_by(|a, b| (b.0 * b.1, b.0, b.1).cmp(&(a.0 * a.1, a.0, a.1)));
    for s in rest {
        push(s, &mut scales);
    }

    let mut windows = Vec::with_capacity(target);
    'outer: for (sh, sw) in scales {
        for row0 in 1..=h - sh + 1 {
            for col0 in 1..=w - sw + 1 {
                windows.push(Window {
                    row0,
                    col0,
                    row1: row0 + sh - 1,
                    col1: col0 + sw - 1,
                });
                if windows.len() == target {
                    break 'outer;
                }
            }
        }
    }
    Ok(WindowSet {
        height: h,
        width: w,
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_valid(set: &WindowSet, target: usize) {
        assert_eq!(set.len(), target);
        let distinct: BTreeSet<_> = set.iter().collect();
        assert_eq!(distinct.len(), target);
        for win in set.iter() {
            assert!(1 <= win.row0 && win.row0 <= win.row1 && win.row1 <= set.height);
            assert!(1 <= win.col0 && win.col0 <= win.col1 && win.col1 <= set.width);
        }
    }

    #[test]
    fn default_layout_has_55_windows() {
        let set = generate_windows(7, 7, 55).unwrap();
        assert_valid(&set, 55);
        assert_eq!(
            set.windows[0],
            Window {
                row0: 1,
                col0: 1,
                row1: 7,
                col1: 7
            }
        );
        let sides: BTreeSet<usize> = set.iter().map(|w| w.row1 - w.row0 + 1).collect();
        assert_eq!(sides, BTreeSet::from([3, 4, 5, 6, 7]));
    }

    #[test]
    fn single_cell_grid() {
        let set = generate_windows(1, 1, 1).unwrap();
        assert_eq!(
            set.windows,
            vec![Window {
                row0: 1,
                col0: 1,
                row1: 1,
                col1: 1
            }]
        );
    }

    #[test]
    fn small_grid_in_bounds() {
        assert_valid(&generate_windows(4, 4, 5).unwrap(), 5);
    }

    #[test]
    fn every_target_up_to_the_maximum_is_reachable() {
        for (h, w) in [(3, 3), (2, 5), (4, 1)] {
            let max = distinct_window_count(h, w);
            for target in 1..=max {
                assert_valid(&generate_windows(h, w, target).unwrap(), target);
            }
            assert!(generate_windows(h, w, max + 1).is_err());
        }
    }

    #[test]
    fn layout_is_deterministic() {
        assert_eq!(
            generate_windows(7, 7, 55).unwrap(),
            generate_windows(7, 7, 55).unwrap()
        );
    }
}
