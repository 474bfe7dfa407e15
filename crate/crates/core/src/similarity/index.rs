//! Exact branch-and-bound decoding over a trie of code blocks.
//!
//! Every row is a sequence of blocks (one per structure slot, then one per
//! radical slot) and each block position only takes a handful of distinct
//! values across the codebook. Rows are stored in a trie keyed by those block
//! symbols. For a frame, the score of every symbol at every block position is
//! computed once; the search then walks the trie best-first and drops any
//! subtree whose optimistic bound (prefix score plus the best possible score
//! of the remaining blocks) cannot beat the incumbent under the decode tie
//! rule. Results are identical to a linear scan for integer-valued frames.

use std::collections::{HashMap, VecDeque};

use crate::codebook::{Codebook, Trit};

#[derive(Debug, Clone, Copy)]
struct Node {
    symbol: u32,
    first_child: u32,
    child_count: u32,
    /// Smallest `(nnz, row)` among rows below this node.
    min_key: (u32, u32),
}

#[derive(Debug, Clone)]
pub struct BlockIndex {
    blocks: Vec<(usize, usize)>,
    /// Distinct block contents per block position, concatenated.
    alphabets: Vec<Vec<Trit>>,
    nodes: Vec<Node>,
    rows: usize,
}

impl BlockIndex {
    pub fn build(codebook: &Codebook) -> Self {
        let blocks = codebook.params().blocks();
        let n = codebook.len();
        let b = blocks.len();
        let mut alphabets: Vec<Vec<Trit>> = vec![Vec::new(); b];
        let mut seqs = vec![0u32; n * b];
        for (k, &(offset, len)) in blocks.iter().enumerate() {
            let mut interned: HashMap<&[Trit], u32> = HashMap::new();
            for i in 0..n {
                let content = &codebook.row(i)[offset..offset + len];
                let next = interned.len() as u32;
                let sym = *interned.entry(content).or_insert_with(|| {
                    alphabets[k].extend_from_slice(content);
                    next
                });
                seqs[i * b + k] = sym;
            }
        }

        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_unstable_by(|&x, &y| {
            let (x, y) = (x as usize, y as usize);
            seqs[x * b..(x + 1) * b].cmp(&seqs[y * b..(y + 1) * b])
        });

        let mut nodes = vec![Node {
            symbol: 0,
            first_child: 0,
            child_count: 0,
            min_key: (u32::MAX, u32::MAX),
        }];
        // (node, lo, hi, depth) over `order`; children of one parent are
        // pushed together so they stay contiguous.
        let mut queue = VecDeque::from([(0usize, 0usize, n, 0usize)]);
        while let Some((node, lo, hi, depth)) = queue.pop_front() {
            if depth == b {
                let row = order[lo];
                debug_assert_eq!(hi - lo, 1, "codebook rows are distinct");
                nodes[node].min_key = (codebook.row_nnz(row as usize) as u32, row);
                continue;
            }
            let first = nodes.len();
            let mut start = lo;
            while start < hi {
                let sym = seqs[order[start] as usize * b + depth];
                let mut end = start + 1;
                while end < hi && seqs[order[end] as usize * b + depth] == sym {
                    end += 1;
                }
                let id = nodes.len();
                nodes.push(Node {
                    symbol: sym,
                    first_child: 0,
                    child_count: 0,
                    min_key: (u32::MAX, u32::MAX),
                });
                queue.push_back((id, start, end, depth + 1));
                start = end;
            }
            nodes[node].first_child = first as u32;
            nodes[node].child_count = (nodes.len() - first) as u32;
        }
        for id in (0..nodes.len()).rev() {
            let Node {
                first_child,
                child_count,
                ..
            } = nodes[id];
            if child_count > 0 {
                let lo = first_child as usize;
                let key = nodes[lo..lo + child_count as usize]
                    .iter()
                    .map(|c| c.min_key)
                    .min()
                    .expect("non-empty");
                nodes[id].min_key = key;
            }
        }
        BlockIndex {
            blocks,
            alphabets,
            nodes,
            rows: n,
        }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Best label row for `frame` under the decode tie rule, with its score.
    /// `None` for an empty codebook.
    pub fn decode(&self, frame: &[f64]) -> Option<(usize, f64)> {
        if self.rows == 0 {
            return None;
        }
        let b = self.blocks.len();
        // values[k] holds the score of every distinct block content at position k.
        let mut flat = Vec::new();
        let mut starts = Vec::with_capacity(b + 1);
        let mut suffix = vec![0.0; b + 1];
        for (k, &(offset, len)) in self.blocks.iter().enumerate() {
            let f = &frame[offset..offset + len];
            starts.push(flat.len());
            flat.extend(
                self.alphabets[k]
                    .chunks_exact(len)
                    .map(|c| c.iter().zip(f).map(|(&a, &x)| a as f64 * x).sum::<f64>()),
            );
        }
        starts.push(flat.len());
        let values: Vec<&[f64]> = (0..b).map(|k| &flat[starts[k]..starts[k + 1]]).collect();
        for k in (0..b).rev() {
            let best = values[k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            suffix[k] = suffix[k + 1] + best;
        }
        let integral = frame.iter().all(|x| x.fract() == 0.0 && x.abs() < 1e12);
        let slack = |bound: f64| {
            if integral {
                0.0
            } else {
                1e-9 * (1.0 + bound.abs())
            }
        };

        let mut best: Option<(f64, (u32, u32))> = None;
        // (node, depth of node, prefix score)
        let mut stack: Vec<(u32, usize, f64)> = vec![(0, 0, 0.0)];
        let mut children: Vec<(u32, f64)> = Vec::new();
        while let Some((id, depth, prefix)) = stack.pop() {
            let node = self.nodes[id as usize];
            if let Some((best_score, best_key)) = best {
                let bound = prefix + suffix[depth];
                let hi = bound + slack(bound);
                if hi < best_score || (hi == best_score && node.min_key > best_key) {
                    continue;
                }
            }
            if depth == b {
                let key = node.min_key;
                let better = match best {
                    None => true,
                    Some((s, k)) => prefix > s || (prefix == s && key < k),
                };
                if better {
                    best = Some((prefix, key));
                }
                continue;
            }
            children.clear();
            let lo = node.first_child as usize;
            for c in lo..lo + node.child_count as usize {
                let sym = self.nodes[c].symbol as usize;
                children.push((c as u32, prefix + values[depth][sym]));
            }
            // Worst first so the most promising child is popped next.
            if children.len() > 1 {
                children.sort_unstable_by(|x, y| {
                    x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal)
                });
            }
            stack.extend(children.iter().map(|&(c, s)| (c, depth + 1, s)));
        }
        best.map(|(score, (_, row))| (row as usize, score))
    }

    pub fn decode_trits(&self, frame: &[Trit]) -> Option<(usize, f64)> {
        let real: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
        self.decode(&real)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_codebook, CodeTables};
    use crate::embed::CodeParams;
    use crate::ids::parse_ids;
    use crate::similarity::decode_frame;

    #[test]
    fn matches_linear_scan_on_small_codebook() {
        let p = CodeParams::default();
        let e: Vec<_> = [
            ("木", "木"),
            ("林", "⿰木木"),
            ("森", "⿱木⿰木木"),
            ("杏", "⿱木口"),
            ("口", "口"),
            ("呆", "⿱口木"),
        ]
        .iter()
        .map(|(c, s)| (c.to_string(), parse_ids(s).unwrap()))
        .collect();
        let tables = CodeTables::generate(e.iter().map(|x| &x.1), &p, 9, 1).unwrap();
        let cb = build_codebook(&e, &tables, &p, 9).unwrap();
        let index = BlockIndex::build(&cb);
        for i in 0..cb.len() {
            let (row, score) = index.decode_trits(cb.row(i)).unwrap();
            assert_eq!(row, i);
            assert_eq!(score, cb.row_nnz(i) as f64);
        }
        let zero = vec![0.0; cb.dim()];
        assert_eq!(
            index.decode(&zero).unwrap().0,
            decode_frame(&cb, &zero).unwrap().index
        );
    }
}
