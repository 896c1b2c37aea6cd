//! 8-connected region labeling over a small occupancy grid.

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Partitions the occupied cells of a row-major `height x width` grid into
/// 8-connected regions.
///
/// Each region lists its cells in ascending order; regions are ordered by
/// their anchor (smallest cell, i.e. lexicographically smallest `(h, w)`).
pub fn label_regions(height: usize, width: usize, occupied: &[bool]) -> Vec<Vec<usize>> {
    assert_eq!(occupied.len(), height * width);
    let mut sets = DisjointSet::new(occupied.len());
    for h in 0..height {
        for w in 0..width {
            let i = h * width + w;
            if !occupied[i] {
                continue;
            }
            // previously scanned neighbours: W, NW, N, NE
            if w > 0 && occupied[i - 1] {
                sets.union(i, i - 1);
            }
            if h > 0 {
                let up = i - width;
                if occupied[up] {
                    sets.union(i, up);
                }
                if w > 0 && occupied[up - 1] {
                    sets.union(i, up - 1);
                }
                if w + 1 < width && occupied[up + 1] {
                    sets.union(i, up + 1);
                }
            }
        }
    }

    let mut slot = vec![usize::MAX; occupied.len()];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    for i in (0..occupied.len()).filter(|i| occupied[*i]) {
        let root = sets.find(i);
        if slot[root] == usize::MAX {
            slot[root] = regions.len();
            regions.push(Vec::new());
        }
        regions[slot[root]].push(i);
    }
    regions
}

/// `alpha * sum(PS) + (1 - alpha) * |cells|` for one region.
pub fn region_score(cells: &[usize], cell_ps: &[f64], alpha: f64) -> f64 {
    alpha * region_sum(cells, cell_ps) + (1.0 - alpha) * cells.len() as f64
}

fn region_sum(cells: &[usize], cell_ps: &[f64]) -> f64 {
    cells.iter().map(|c| cell_ps[*c]).sum()
}

/// Index of the best-scoring region. Equal scores go to the larger PS sum,
/// then to the region with the smallest anchor.
pub fn winning_region(regions: &[Vec<usize>], cell_ps: &[f64], alpha: f64) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, cells) in regions.iter().enumerate() {
        let score = region_score(cells, cell_ps, alpha);
        let sum = region_sum(cells, cell_ps);
        let better = match best {
            None => true,
            Some((_, bs, bsum)) => score > bs || (score == bs && sum > bsum),
        };
        if better {
            best = Some((i, score, sum));
        }
    }
    best.map(|(i, _, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: &[&str]) -> (usize, usize, Vec<bool>) {
        let h = rows.len();
        let w = rows[0].len();
        let occ = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        (h, w, occ)
    }

    #[test]
    fn diagonal_cells_connect() {
        let (h, w, occ) = grid(&["#..", ".#.", "..#"]);
        assert_eq!(label_regions(h, w, &occ), vec![vec![0, 4, 8]]);
    }

    #[test]
    fn anti_diagonal_and_u_shape() {
        let (h, w, occ) = grid(&["..#", ".#.", "#.."]);
        assert_eq!(label_regions(h, w, &occ).len(), 1);
        // the two arms only meet at the bottom row
        let (h, w, occ) = grid(&["#.#", "#.#", "###"]);
        assert_eq!(label_regions(h, w, &occ).len(), 1);
    }

    #[test]
    fn separate_regions_ordered_by_anchor() {
        let (h, w, occ) = grid(&["..##", "....", "#..."]);
        assert_eq!(label_regions(h, w, &occ), vec![vec![2, 3], vec![8]]);
    }

    #[test]
    fn empty_grid() {
        assert!(label_regions(2, 2, &[false; 4]).is_empty());
    }

    #[test]
    fn tie_goes_to_larger_ps_sum() {
        // alpha 0.5: region A = 2 cells with sum 4 -> 3.0; region B = 3 cells with sum 3 -> 3.0
        let regions = vec![vec![0, 1], vec![5, 6, 7]];
        let mut ps = vec![0.0; 8];
        ps[0] = 2.0;
        ps[1] = 2.0;
        ps[5] = 1.0;
        ps[6] = 1.0;
        ps[7] = 1.0;
        assert_eq!(winning_region(&regions, &ps, 0.5), Some(0));
        let swapped = vec![vec![5, 6, 7], vec![0, 1]];
        assert_eq!(winning_region(&swapped, &ps, 0.5), Some(1));
    }

    #[test]
    fn full_tie_goes_to_first_anchor() {
        let regions = vec![vec![0], vec![2]];
        assert_eq!(winning_region(&regions, &[1.0, 0.0, 1.0], 0.2), Some(0));
    }
}
