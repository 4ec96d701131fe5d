//! Greedy pairwise contraction ordering for small tensor networks.
//!
//! Tensors are given as lists of index labels with a shared size table.
//! The cost of contracting two tensors is the product of the sizes of the
//! union of their indices.

use std::collections::{BTreeSet, HashMap};

pub type Label = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionPath {
    /// Positions into the live tensor list; the pair is removed and the
    /// result appended at the end.
    pub steps: Vec<(usize, usize)>,
    pub flops: f64,
    pub largest_intermediate: f64,
}

fn size_of(indices: &BTreeSet<Label>, sizes: &HashMap<Label, usize>) -> f64 {
    indices.iter().map(|l| sizes[l] as f64).product()
}

fn contract_pair(
    live: &[BTreeSet<Label>],
    i: usize,
    j: usize,
    output: &BTreeSet<Label>,
) -> (BTreeSet<Label>, BTreeSet<Label>) {
    let union: BTreeSet<Label> = live[i].union(&live[j]).copied().collect();
    let needed_elsewhere: BTreeSet<Label> = live
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != i && k != j)
        .flat_map(|(_, t)| t.iter().copied())
        .chain(output.iter().copied())
        .collect();
    let kept = union
        .iter()
        .copied()
        .filter(|l| needed_elsewhere.contains(l))
        .collect();
    (union, kept)
}

/// Greedy order: identical index sets first (Hadamard products), then the
/// connected pair with the smallest result (ties by cost), then outer
/// products of whatever is left.
pub fn greedy_path(inputs: &[Vec<Label>], output: &[Label], sizes: &HashMap<Label, usize>) -> ContractionPath {
    let output: BTreeSet<Label> = output.iter().copied().collect();
    let mut live: Vec<BTreeSet<Label>> = inputs.iter().map(|t| t.iter().copied().collect()).collect();
    let mut steps = Vec::new();
    let mut flops = 0.0;
    let mut largest = live.iter().map(|t| size_of(t, sizes)).fold(0.0, f64::max);

    let mut commit = |live: &mut Vec<BTreeSet<Label>>, i: usize, j: usize, steps: &mut Vec<(usize, usize)>| {
        let (union, kept) = contract_pair(live, i, j, &output);
        flops += size_of(&union, sizes);
        largest = largest.max(size_of(&kept, sizes));
        steps.push((i, j));
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        live.remove(hi);
        live.remove(lo);
        live.push(kept);
    };

    while live.len() > 1 {
        let mut hadamard = None;
        'outer: for i in 0..live.len() {
            for j in i + 1..live.len() {
                if live[i] == live[j] {
                    hadamard = Some((i, j));
                    break 'outer;
                }
            }
        }
        if let Some((i, j)) = hadamard {
            commit(&mut live, i, j, &mut steps);
            continue;
        }
        let mut best: Option<(f64, f64, usize, usize)> = None;
        for i in 0..live.len() {
            for j in i + 1..live.len() {
                if live[i].is_disjoint(&live[j]) {
                    continue;
                }
                let (union, kept) = contract_pair(&live, i, j, &output);
                let key = (size_of(&kept, sizes), size_of(&union, sizes));
                if best.is_none_or(|b| key < (b.0, b.1)) {
                    best = Some((key.0, key.1, i, j));
                }
            }
        }
        if best.is_none() {
            for i in 0..live.len() {
                for j in i + 1..live.len() {
                    let (union, kept) = contract_pair(&live, i, j, &output);
                    let key = (size_of(&kept, sizes), size_of(&union, sizes));
                    if best.is_none_or(|b| key < (b.0, b.1)) {
                        best = Some((key.0, key.1, i, j));
                    }
                }
            }
        }
        let (_, _, i, j) = best.expect("at least two tensors remain");
        commit(&mut live, i, j, &mut steps);
    }
    ContractionPath {
        steps,
        flops,
        largest_intermediate: largest,
    }
}

/// Cost of following an explicit path.
pub fn path_cost(inputs: &[Vec<Label>], output: &[Label], sizes: &HashMap<Label, usize>, steps: &[(usize, usize)]) -> f64 {
    let output: BTreeSet<Label> = output.iter().copied().collect();
    let mut live: Vec<BTreeSet<Label>> = inputs.iter().map(|t| t.iter().copied().collect()).collect();
    let mut flops = 0.0;
    for &(i, j) in steps {
        let (union, kept) = contract_pair(&live, i, j, &output);
        flops += size_of(&union, sizes);
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        live.remove(hi);
        live.remove(lo);
        live.push(kept);
    }
    flops
}

/// Labels for applying a k-site operator to an N-site state: state sites
/// are `0..n`, operator output legs are `n..n+k`.
pub fn local_operator_network(n: usize, sites: &[usize], dims: &[usize]) -> (Vec<Vec<Label>>, Vec<Label>, HashMap<Label, usize>) {
    let mut sizes = HashMap::new();
    for (s, &d) in dims.iter().enumerate() {
        sizes.insert(s, d);
    }
    let mut op = Vec::new();
    let mut output: Vec<Label> = (0..n).collect();
    for (k, &s) in sites.iter().enumerate() {
        let out_leg = n + k;
        sizes.insert(out_leg, dims[s]);
        op.push(out_leg);
        op.push(s);
        output[s] = out_leg;
    }
    (vec![op, (0..n).collect()], output, sizes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn permutations_of_pairs(n: usize) -> Vec<Vec<(usize, usize)>> {
        if n <= 1 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for rest in permutations_of_pairs(n - 1) {
                    let mut p = vec![(i, j)];
                    p.extend(rest);
                    out.push(p);
                }
            }
        }
        out
    }

    #[test]
    fn two_tensors_have_one_path() {
        let sizes: HashMap<Label, usize> = [(0, 3), (1, 4)].into_iter().collect();
        let p = greedy_path(&[vec![0, 1], vec![1]], &[0], &sizes);
        assert_eq!(p.steps, vec![(0, 1)]);
        assert_eq!(p.flops, 12.0);
    }

    #[test]
    fn one_body_operator_on_rank_three_state_costs_d_to_the_four() {
        let d = 3;
        let (inputs, output, sizes) = local_operator_network(3, &[1], &[d, d, d]);
        let p = greedy_path(&inputs, &output, &sizes);
        assert_eq!(p.flops, (d as f64).powi(4));
        let (inputs, output, sizes) = local_operator_network(3, &[0, 2], &[d, d, d]);
        assert_eq!(greedy_path(&inputs, &output, &sizes).flops, (d as f64).powi(5));
    }

    #[test]
    fn greedy_beats_left_to_right_on_a_gate_chain() {
        // state on sites 0..4, three 2-body gates (0,1), (1,2), (2,3) applied in sequence
        let d = 2;
        let mut sizes: HashMap<Label, usize> = HashMap::new();
        for l in 0..20 {
            sizes.insert(l, d);
        }
        let inputs = vec![
            vec![0, 1, 2, 3],
            vec![10, 11, 0, 1],
            vec![12, 13, 11, 2],
            vec![14, 15, 13, 3],
        ];
        let output = vec![10, 12, 14, 15];
        let greedy = greedy_path(&inputs, &output, &sizes);
        let naive = path_cost(&inputs, &output, &sizes, &[(0, 1), (0, 1), (0, 1)]);
        assert!(greedy.flops <= naive);
        let best = permutations_of_pairs(4)
            .iter()
            .map(|p| path_cost(&inputs, &output, &sizes, p))
            .fold(f64::INFINITY, f64::min);
        assert!(greedy.flops >= best);
        assert!(greedy.flops <= 2.0 * best);
    }

    #[test]
    fn disconnected_tensors_fall_back_to_outer_products() {
        let sizes: HashMap<Label, usize> = [(0, 2), (1, 5)].into_iter().collect();
        let p = greedy_path(&[vec![0], vec![1]], &[0, 1], &sizes);
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.largest_intermediate, 10.0);
    }
}
