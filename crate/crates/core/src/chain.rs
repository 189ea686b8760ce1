//! Structural analysis of finite Markov chains: communicating classes and
//! their recurrent (closed) subset.

/// Recurrent classes and transient states of a finite chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStructure {
    /// Closed communicating classes, each sorted ascending; the list is
    /// ordered by smallest member.
    pub recurrent: Vec<Vec<usize>>,
    /// States outside every closed class, ascending.
    pub transient: Vec<usize>,
    /// `class_of[i]` is the index into `recurrent` for recurrent states.
    pub class_of: Vec<Option<usize>>,
}

impl ChainStructure {
    pub fn is_unichain(&self) -> bool {
        self.recurrent.len() == 1
    }
}

/// Classifies the states of a chain given by its successor lists (edges with
/// positive probability).
pub fn classify<'a, F, I>(n: usize, successors: F) -> ChainStructure
where
    F: Fn(usize) -> I,
    I: Iterator<Item = usize> + 'a,
{
    let comp = strongly_connected(n, &successors);
    let num_comp = comp.iter().copied().max().map_or(0, |m| m + 1);

    let mut closed = vec![true; num_comp];
    for v in 0..n {
        for w in successors(v) {
            if comp[w] != comp[v] {
                closed[comp[v]] = false;
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_comp];
    for v in 0..n {
        members[comp[v]].push(v);
    }
    let mut recurrent: Vec<Vec<usize>> = members
        .into_iter()
        .enumerate()
        .filter(|(c, _)| closed[*c])
        .map(|(_, m)| m)
        .collect();
    recurrent.sort_by_key(|m| m[0]);

    let mut class_of = vec![None; n];
    for (k, class) in recurrent.iter().enumerate() {
        for &v in class {
            class_of[v] = Some(k);
        }
    }
    let transient = (0..n).filter(|&v| class_of[v].is_none()).collect();
    ChainStructure {
        recurrent,
        transient,
        class_of,
    }
}

/// Iterative Tarjan; returns the component id of every vertex.
fn strongly_connected<'a, F, I>(n: usize, successors: &F) -> Vec<usize>
where
    F: Fn(usize) -> I,
    I: Iterator<Item = usize> + 'a,
{
    const UNVISITED: usize = usize::MAX;
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comp = vec![UNVISITED; n];
    let mut next_index = 0usize;
    let mut next_comp = 0usize;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (vertex, materialized successor list, cursor)
        let mut call: Vec<(usize, Vec<usize>, usize)> = Vec::new();
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        call.push((root, successors(root).collect(), 0));

        while let Some(frame) = call.last_mut() {
            let v = frame.0;
            if frame.2 < frame.1.len() {
                let w = frame.1[frame.2];
                frame.2 += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, successors(w).collect(), 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(parent) = call.last() {
                    let p = parent.0;
                    low[p] = low[p].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_lists(lists: &[Vec<usize>]) -> ChainStructure {
        classify(lists.len(), |i| lists[i].clone().into_iter())
    }

    #[test]
    fn identity_chain_has_one_class_per_state() {
        let s = from_lists(&[vec![0], vec![1], vec![2]]);
        assert_eq!(s.recurrent, vec![vec![0], vec![1], vec![2]]);
        assert!(s.transient.is_empty());
    }

    #[test]
    fn swap_chain_is_a_single_class() {
        let s = from_lists(&[vec![1], vec![0]]);
        assert!(s.is_unichain());
        assert_eq!(s.recurrent[0], vec![0, 1]);
    }

    #[test]
    fn transient_states_feed_into_absorber() {
        // 0 -> 1 -> 2 -> 2, 3 -> {0, 3}
        let s = from_lists(&[vec![1], vec![2], vec![2], vec![0, 3]]);
        assert_eq!(s.recurrent, vec![vec![2]]);
        assert_eq!(s.transient, vec![0, 1, 3]);
        assert_eq!(s.class_of[2], Some(0));
    }

    #[test]
    fn two_closed_classes_with_shared_transient_feeder() {
        let s = from_lists(&[vec![1, 3], vec![2], vec![1], vec![4], vec![3]]);
        assert_eq!(s.recurrent, vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(s.transient, vec![0]);
    }
}
