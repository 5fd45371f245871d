//! Stage 3: two-pass connected-component labeling of a color map.
//!
//! Stripes are labeled independently (pass 1 with a local union-find), seam
//! rows between consecutive stripes are merged serially in a global
//! union-find, and pass 2 writes final ids numbered by first occurrence in a
//! row-major scan. The output is therefore canonical for every tile height.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QnqError, Result};
use crate::naming::ColorMap;
use crate::raster::TileScheme;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl FromStr for Connectivity {
    type Err = QnqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "4" => Ok(Self::Four),
            "8" => Ok(Self::Eight),
            _ => Err(QnqError::invalid(format!("connectivity must be 4 or 8, got {s}"))),
        }
    }
}

/// Union-find with path compression and union by rank.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            parent: Vec::with_capacity(n),
            rank: Vec::with_capacity(n),
        }
    }

    pub fn new(n: usize) -> Self {
        let mut uf = Self::with_capacity(n);
        for _ in 0..n {
            uf.make_set();
        }
        uf
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.rank.push(0);
        id
    }

    pub fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = x;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    pub fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (hi, lo) = if self.rank[ra as usize] >= self.rank[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo as usize] = hi;
        if self.rank[hi as usize] == self.rank[lo as usize] {
            self.rank[hi as usize] += 1;
        }
        hi
    }
}

/// Per-pixel segment ids, dense in `0..segment_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    segment_count: u32,
}

impl LabelMap {
    /// Validates that ids are dense.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(QnqError::format("label map length does not match its dimensions"));
        }
        let count = labels.iter().max().map_or(0, |&m| m as usize + 1);
        let mut seen = vec![false; count];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(QnqError::integrity("segment ids are not dense"));
        }
        Ok(Self {
            width,
            height,
            labels,
            segment_count: count as u32,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn segment_count(&self) -> u32 {
        self.segment_count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

/// Segment ids are `u32`; more pixels than that could overflow them.
pub fn check_id_capacity(pixels: u64) -> Result<()> {
    if pixels > u64::from(u32::MAX) {
        return Err(QnqError::capacity(format!(
            "{pixels} pixels may exceed the 32-bit segment id space"
        )));
    }
    Ok(())
}

pub fn label_components(map: &ColorMap, connectivity: Connectivity) -> Result<LabelMap> {
    label_components_streamed(map, &TileScheme::whole(map.height()), connectivity)
}

pub fn label_components_streamed(
    map: &ColorMap,
    scheme: &TileScheme,
    connectivity: Connectivity,
) -> Result<LabelMap> {
    label_grid(map.width(), map.height(), map.codes(), scheme, connectivity)
}

/// Labels any grid of equality-comparable codes.
pub fn label_grid<T: Copy + Eq + Sync>(
    width: usize,
    height: usize,
    codes: &[T],
    scheme: &TileScheme,
    connectivity: Connectivity,
) -> Result<LabelMap> {
    if width == 0 || height == 0 || codes.len() != width * height {
        return Err(QnqError::invalid("grid length does not match its dimensions"));
    }
    check_id_capacity((width * height) as u64)?;
    let ranges = scheme.ranges(height);
    let mut labels = vec![0u32; width * height];

    // Pass 1: each stripe gets compact local ids in first-occurrence order.
    let mut chunks: Vec<&mut [u32]> = Vec::with_capacity(ranges.len());
    let mut rest = labels.as_mut_slice();
    for r in &ranges {
        let (head, tail) = rest.split_at_mut(r.len() * width);
        chunks.push(head);
        rest = tail;
    }
    let local_counts: Vec<u32> = chunks
        .into_par_iter()
        .zip(ranges.par_iter())
        .map(|(out, r)| {
            let stripe = &codes[r.start * width..r.end * width];
            label_stripe(width, r.len(), stripe, out, connectivity)
        })
        .collect();

    // Seams: serial merge of equivalences between consecutive stripes.
    let mut offsets = Vec::with_capacity(ranges.len());
    let mut total = 0u64;
    for &c in &local_counts {
        offsets.push(total as u32);
        total += u64::from(c);
    }
    let mut uf = UnionFind::new(total as usize);
    for (s, r) in ranges.iter().enumerate().skip(1) {
        let above = (r.start - 1) * width;
        let below = r.start * width;
        for x in 0..width {
            let code = codes[below + x];
            let own = offsets[s] + labels[below + x];
            let lo = if connectivity == Connectivity::Eight { x.saturating_sub(1) } else { x };
            let hi = if connectivity == Connectivity::Eight { (x + 1).min(width - 1) } else { x };
            for nx in lo..=hi {
                if codes[above + nx] == code {
                    uf.union(own, offsets[s - 1] + labels[above + nx]);
                }
            }
        }
    }

    // Provisional ids in index order visit roots in row-major first-occurrence order.
    let mut root_id = vec![NONE; total as usize];
    let mut final_id = vec![0u32; total as usize];
    let mut next = 0u32;
    for g in 0..total as u32 {
        let root = uf.find(g) as usize;
        if root_id[root] == NONE {
            root_id[root] = next;
            next += 1;
        }
        final_id[g as usize] = root_id[root];
    }

    // Pass 2.
    labels
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            let s = ranges.partition_point(|r| r.end <= y);
            let off = offsets[s] as usize;
            for l in row.iter_mut() {
                *l = final_id[off + *l as usize];
            }
        });

    Ok(LabelMap {
        width,
        height,
        labels,
        segment_count: next,
    })
}

/// Two-pass labeling inside one stripe; returns the number of local ids.
fn label_stripe<T: Copy + Eq>(
    width: usize,
    rows: usize,
    codes: &[T],
    out: &mut [u32],
    connectivity: Connectivity,
) -> u32 {
    let mut uf = UnionFind::with_capacity(width * rows / 4 + 1);
    let eight = connectivity == Connectivity::Eight;
    for y in 0..rows {
        for x in 0..width {
            let i = y * width + x;
            let c = codes[i];
            let mut label = NONE;
            let mut join = |l: u32, uf: &mut UnionFind| {
                if label == NONE {
                    label = l;
                } else if label != l {
                    label = uf.union(label, l);
                }
            };
            if x > 0 && codes[i - 1] == c {
                join(out[i - 1], &mut uf);
            }
            if y > 0 {
                let up = i - width;
                if codes[up] == c {
                    join(out[up], &mut uf);
                }
                if eight {
                    if x > 0 && codes[up - 1] == c {
                        join(out[up - 1], &mut uf);
                    }
                    if x + 1 < width && codes[up + 1] == c {
                        join(out[up + 1], &mut uf);
                    }
                }
            }
            out[i] = if label == NONE { uf.make_set() } else { label };
        }
    }
    let mut compact = vec![NONE; uf.len()];
    let mut next = 0u32;
    for l in out.iter_mut() {
        let root = uf.find(*l) as usize;
        if compact[root] == NONE {
            compact[root] = next;
            next += 1;
        }
        *l = compact[root];
    }
    next
}

/// Renumbers ids by first occurrence in row-major order.
pub fn canonical_relabel(labels: &LabelMap) -> LabelMap {
    let mut map = vec![NONE; labels.segment_count as usize];
    let mut next = 0u32;
    let out = labels
        .labels
        .iter()
        .map(|&l| {
            let slot = &mut map[l as usize];
            if *slot == NONE {
                *slot = next;
                next += 1;
            }
            *slot
        })
        .collect();
    LabelMap {
        width: labels.width,
        height: labels.height,
        labels: out,
        segment_count: next,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn cmap(w: usize, h: usize, codes: Vec<u8>) -> ColorMap {
        ColorMap::new(w, h, 50, codes).unwrap()
    }

    /// BFS flood fill, ids in row-major first-occurrence order.
    fn flood_fill(w: usize, h: usize, codes: &[u8], conn: Connectivity) -> Vec<u32> {
        let mut out = vec![NONE; w * h];
        let mut next = 0;
        for start in 0..w * h {
            if out[start] != NONE {
                continue;
            }
            out[start] = next;
            let mut q = VecDeque::from([start]);
            while let Some(p) = q.pop_front() {
                let (x, y) = ((p % w) as i64, (p / w) as i64);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy) == (0, 0) || (conn == Connectivity::Four && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let n = ny as usize * w + nx as usize;
                        if out[n] == NONE && codes[n] == codes[p] {
                            out[n] = next;
                            q.push_back(n);
                        }
                    }
                }
            }
            next += 1;
        }
        out
    }

    #[test]
    fn uniform_map_is_one_segment() {
        let l = label_components(&cmap(7, 5, vec![3; 35]), Connectivity::Eight).unwrap();
        assert_eq!(l.segment_count(), 1);
        assert!(l.labels().iter().all(|&x| x == 0));
    }

    #[test]
    fn checkerboard_adjacency() {
        let m = cmap(2, 2, vec![0, 1, 1, 0]);
        assert_eq!(label_components(&m, Connectivity::Four).unwrap().segment_count(), 4);
        assert_eq!(label_components(&m, Connectivity::Eight).unwrap().segment_count(), 2);
    }

    #[test]
    fn vertical_line_survives_every_seam() {
        let (w, h) = (5, 13);
        let codes: Vec<u8> = (0..w * h).map(|i| u8::from(i % w == 2)).collect();
        let m = cmap(w, h, codes);
        let l = label_components_streamed(&m, &TileScheme::rows(1).unwrap(), Connectivity::Four)
            .unwrap();
        let ids: std::collections::BTreeSet<u32> =
            (0..h).map(|y| l.get(2, y)).collect();
        assert_eq!(ids.len(), 1);
        assert_eq!(l.segment_count(), 3);
    }

    #[test]
    fn diagonal_seam_join_needs_eight() {
        // 1s on the anti-diagonal cross every single-row seam only diagonally.
        let n = 6;
        let codes: Vec<u8> = (0..n * n).map(|i| u8::from(i % n + i / n == n - 1)).collect();
        let m = cmap(n, n, codes);
        let s = TileScheme::rows(1).unwrap();
        let l8 = label_components_streamed(&m, &s, Connectivity::Eight).unwrap();
        let l4 = label_components_streamed(&m, &s, Connectivity::Four).unwrap();
        assert_eq!(l8, label_components(&m, Connectivity::Eight).unwrap());
        assert_eq!(l4, label_components(&m, Connectivity::Four).unwrap());
        assert_eq!(l8.get(n - 1, 0), l8.get(0, n - 1));
        assert_ne!(l4.get(n - 1, 0), l4.get(0, n - 1));
    }

    #[test]
    fn capacity_guard() {
        assert!(check_id_capacity(u64::from(u32::MAX)).is_ok());
        assert!(matches!(
            check_id_capacity(u64::from(u32::MAX) + 1),
            Err(QnqError::Capacity(_))
        ));
    }

    #[test]
    fn distinct_maps_sharing_a_partition() {
        let a = cmap(3, 1, vec![1, 2, 1]);
        let b = cmap(3, 1, vec![7, 3, 9]);
        let la = label_components(&a, Connectivity::Eight).unwrap();
        let lb = label_components(&b, Connectivity::Eight).unwrap();
        assert_eq!(canonical_relabel(&la), canonical_relabel(&lb));
    }

    #[test]
    fn distinct_partitions_have_distinct_canonical_forms() {
        let a = LabelMap::new(3, 1, vec![0, 0, 1]).unwrap();
        let b = LabelMap::new(3, 1, vec![0, 1, 1]).unwrap();
        assert_ne!(canonical_relabel(&a), canonical_relabel(&b));
    }

    #[test]
    fn label_map_requires_dense_ids() {
        assert!(LabelMap::new(2, 1, vec![0, 2]).is_err());
        assert!(LabelMap::new(2, 1, vec![1, 0]).is_ok());
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        uf.union(0, 1);
        uf.union(3, 4);
        uf.union(1, 4);
        let r = uf.find(0);
        assert_eq!(uf.find(r), r);
        assert!([1, 3, 4].iter().all(|&x| uf.find(x) == r));
        assert_ne!(uf.find(2), r);
    }

    fn arb_map() -> impl Strategy<Value = (usize, usize, Vec<u8>)> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            (Just(w), Just(h), proptest::collection::vec(0u8..3, w * h))
        })
    }

    proptest! {
        #[test]
        fn matches_flood_fill((w, h, codes) in arb_map(), four in any::<bool>()) {
            let conn = if four { Connectivity::Four } else { Connectivity::Eight };
            let l = label_components(&cmap(w, h, codes.clone()), conn).unwrap();
            let oracle = flood_fill(w, h, &codes, conn);
            prop_assert_eq!(l.labels(), oracle.as_slice());
        }

        #[test]
        fn streamed_is_independent_of_tile_height(
            (w, h, codes) in arb_map(), four in any::<bool>(), t in 1usize..20
        ) {
            let conn = if four { Connectivity::Four } else { Connectivity::Eight };
            let m = cmap(w, h, codes);
            let whole = label_components(&m, conn).unwrap();
            for th in [1, 4, 17, t, h] {
                let s = label_components_streamed(&m, &TileScheme::rows(th).unwrap(), conn).unwrap();
                prop_assert_eq!(&s, &whole);
            }
        }

        #[test]
        fn canonical_form_ignores_permutation((w, h, codes) in arb_map(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let l = label_components(&cmap(w, h, codes), Connectivity::Eight).unwrap();
            let mut perm: Vec<u32> = (0..l.segment_count()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted = LabelMap::new(w, h, l.labels().iter().map(|&x| perm[x as usize]).collect()).unwrap();
            prop_assert_eq!(canonical_relabel(&permuted), canonical_relabel(&l));
            prop_assert_eq!(canonical_relabel(&l), l);
        }

        #[test]
        fn segments_are_single_colored_and_maximal((w, h, codes) in arb_map()) {
            let l = label_components(&cmap(w, h, codes.clone()), Connectivity::Four).unwrap();
            let mut color = vec![None; l.segment_count() as usize];
            for (i, &id) in l.labels().iter().enumerate() {
                let c = color[id as usize].get_or_insert(codes[i]);
                prop_assert_eq!(*c, codes[i]);
                if i % w + 1 < w && codes[i + 1] == codes[i] {
                    prop_assert_eq!(l.labels()[i + 1], id);
                }
                if i + w < w * h && codes[i + w] == codes[i] {
                    prop_assert_eq!(l.labels()[i + w], id);
                }
            }
        }
    }
}
