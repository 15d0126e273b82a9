/// Strongly connected components by an iterative Tarjan walk.
///
/// Components are returned in reverse topological order of the condensation,
/// each sorted ascending.
pub fn tarjan_scc(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut components = Vec::new();
    // (node, next child position)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        while let Some(&(v, child)) = call.last() {
            if child == 0 && index[v] == UNSEEN {
                index[v] = next_index;
                low[v] = next_index;
                next_index += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            if let Some(&w) = adj[v].get(child) {
                call.last_mut().expect("non-empty call stack").1 += 1;
                if index[w] == UNSEEN {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }
    components
}

/// True when the component carries a cycle (more than one node or a self-loop).
pub fn is_cyclic(comp: &[usize], adj: &[Vec<usize>]) -> bool {
    comp.len() > 1 || adj[comp[0]].contains(&comp[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_node_graph() {
        // A -> B -> C -> B
        let adj = vec![vec![1], vec![2], vec![1]];
        let mut comps = tarjan_scc(&adj);
        comps.sort();
        assert_eq!(comps, vec![vec![0], vec![1, 2]]);
        assert!(!is_cyclic(&[0], &adj));
        assert!(is_cyclic(&[1, 2], &adj));
    }

    #[test]
    fn self_loop_is_cyclic() {
        let adj = vec![vec![0]];
        assert_eq!(tarjan_scc(&adj), vec![vec![0]]);
        assert!(is_cyclic(&[0], &adj));
    }
}
