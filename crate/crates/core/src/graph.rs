//! Dependency graph over representations.
//!
//! Nodes are ordered topologically with ties broken by ascending name, so equal
//! graphs always produce equal execution orders.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::config::{GlobalConfig, RepresentationSpec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate representation '{0}'")]
    Duplicate(String),
    #[error("representation '{name}' depends on unknown representation '{dep}'")]
    UnknownDependency { name: String, dep: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("representation '{0}' is not assigned to any group")]
    Unassigned(String),
    #[error("group assignment names unknown representation '{0}'")]
    UnknownAssignment(String),
    #[error(
        "'{name}' (group {group}) depends on '{dep}' from another group, but '{dep}' has no binary export"
    )]
    CrossGroupWithoutBinary {
        name: String,
        group: String,
        dep: String,
    },
}

/// A validated DAG of representations.
///
/// `disk_inputs` holds dependencies that are not computed by this graph: they
/// belong to another representation group and are loaded from the export
/// directory at run time.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationGraph {
    nodes: BTreeMap<String, RepresentationSpec>,
    dependents: BTreeMap<String, BTreeSet<String>>,
    disk_inputs: BTreeMap<String, RepresentationSpec>,
    topo_order: Vec<String>,
}

impl RepresentationGraph {
    pub fn node(&self, name: &str) -> Option<&RepresentationSpec> {
        self.nodes.get(name)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &RepresentationSpec> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    /// Representations that directly depend on `name` inside this graph.
    pub fn dependents(&self, name: &str) -> impl Iterator<Item = &str> {
        self.dependents
            .get(name)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn topo_order(&self) -> &[String] {
        &self.topo_order
    }

    pub fn is_disk_input(&self, name: &str) -> bool {
        self.disk_inputs.contains_key(name)
    }

    /// Specs of dependencies resolved from disk rather than computed here.
    pub fn disk_inputs(&self) -> impl Iterator<Item = &RepresentationSpec> {
        self.disk_inputs.values()
    }

    /// Spec of either a node or a disk input.
    pub fn resolve(&self, name: &str) -> Option<&RepresentationSpec> {
        self.nodes.get(name).or_else(|| self.disk_inputs.get(name))
    }

    /// Subgraph holding `target` and everything it transitively depends on.
    pub fn ancestors_of(&self, target: &str) -> Option<RepresentationGraph> {
        self.nodes.get(target)?;
        let mut keep = BTreeSet::new();
        let mut stack = vec![target.to_string()];
        while let Some(name) = stack.pop() {
            if !keep.insert(name.clone()) {
                continue;
            }
            if let Some(spec) = self.nodes.get(&name) {
                stack.extend(spec.deps.iter().cloned());
            }
        }
        let specs: Vec<_> = self
            .nodes
            .values()
            .filter(|s| keep.contains(&s.name))
            .cloned()
            .collect();
        let external: BTreeMap<_, _> = self
            .disk_inputs
            .iter()
            .filter(|(k, _)| keep.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Some(assemble(specs, external).expect("subgraph of a valid graph is valid"))
    }
}

/// Builds and validates the DAG, caching a deterministic topological order.
pub fn build_graph(specs: &[RepresentationSpec]) -> Result<RepresentationGraph, GraphError> {
    assemble(specs.to_vec(), BTreeMap::new())
}

fn assemble(
    specs: Vec<RepresentationSpec>,
    disk_inputs: BTreeMap<String, RepresentationSpec>,
) -> Result<RepresentationGraph, GraphError> {
    let mut nodes = BTreeMap::new();
    for spec in specs {
        if nodes.contains_key(&spec.name) {
            return Err(GraphError::Duplicate(spec.name));
        }
        nodes.insert(spec.name.clone(), spec);
    }
    let mut dependents: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for spec in nodes.values() {
        for dep in &spec.deps {
            if nodes.contains_key(dep) {
                dependents
                    .entry(dep.clone())
                    .or_default()
                    .insert(spec.name.clone());
            } else if !disk_inputs.contains_key(dep) {
                return Err(GraphError::UnknownDependency {
                    name: spec.name.clone(),
                    dep: dep.clone(),
                });
            }
        }
    }
    if let Some(cycle) = find_cycle(&nodes) {
        return Err(GraphError::Cycle(cycle));
    }
    let topo_order = kahn(&nodes, &dependents);
    Ok(RepresentationGraph {
        nodes,
        dependents,
        disk_inputs,
        topo_order,
    })
}

/// Depth-first search along dependency edges; returns the first cycle found as
/// a closed path (first element repeated at the end).
fn find_cycle(nodes: &BTreeMap<String, RepresentationSpec>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = nodes.keys().map(|k| (k.as_str(), Mark::Fresh)).collect();

    for root in nodes.keys() {
        if marks[root.as_str()] != Mark::Fresh {
            continue;
        }
        // (node, next dep index)
        let mut stack: Vec<(&str, usize)> = vec![(root.as_str(), 0)];
        marks.insert(root, Mark::Active);
        while let Some((name, idx)) = stack.last_mut() {
            let deps = &nodes[*name].deps;
            if *idx < deps.len() {
                let dep = deps[*idx].as_str();
                *idx += 1;
                match marks.get(dep).copied() {
                    // disk inputs are not nodes
                    None | Some(Mark::Done) => {}
                    Some(Mark::Active) => {
                        let start = stack.iter().position(|(n, _)| *n == dep).unwrap();
                        let mut path: Vec<String> =
                            stack[start..].iter().map(|(n, _)| n.to_string()).collect();
                        path.push(dep.to_string());
                        return Some(path);
                    }
                    Some(Mark::Fresh) => {
                        marks.insert(dep, Mark::Active);
                        stack.push((dep, 0));
                    }
                }
            } else {
                marks.insert(name, Mark::Done);
                stack.pop();
            }
        }
    }
    None
}

fn kahn(
    nodes: &BTreeMap<String, RepresentationSpec>,
    dependents: &BTreeMap<String, BTreeSet<String>>,
) -> Vec<String> {
    let mut indegree: BTreeMap<&str, usize> = nodes
        .values()
        .map(|s| {
            let internal: BTreeSet<&String> = s.deps.iter().filter(|d| nodes.contains_key(*d)).collect();
            (s.name.as_str(), internal.len())
        })
        .collect();
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(next) = ready.pop_first() {
        order.push(next.to_string());
        if let Some(children) = dependents.get(next) {
            for child in children {
                let d = indegree.get_mut(child.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert(child.as_str());
                }
            }
        }
    }
    order
}

/// Topological order of `graph` (ties broken by ascending name).
pub fn topo_sort(graph: &RepresentationGraph) -> Vec<String> {
    graph.topo_order.clone()
}

/// Splits the graph into representation groups, one subgraph per group id
/// (sorted by group id). Dependencies that cross groups become disk inputs
/// of the dependent's group.
pub fn partition_groups(
    graph: &RepresentationGraph,
    assignment: &BTreeMap<String, String>,
    globals: &GlobalConfig,
) -> Result<Vec<(String, RepresentationGraph)>, GraphError> {
    if let Some(unknown) = assignment.keys().find(|k| !graph.contains(k)) {
        return Err(GraphError::UnknownAssignment(unknown.clone()));
    }
    let mut groups: BTreeMap<&str, Vec<RepresentationSpec>> = BTreeMap::new();
    for spec in graph.nodes() {
        let group = assignment
            .get(&spec.name)
            .ok_or_else(|| GraphError::Unassigned(spec.name.clone()))?;
        groups.entry(group.as_str()).or_default().push(spec.clone());
    }
    let mut out = Vec::with_capacity(groups.len());
    for (group, specs) in groups {
        let members: BTreeSet<&str> = specs.iter().map(|s| s.name.as_str()).collect();
        let mut external = BTreeMap::new();
        for spec in &specs {
            for dep in &spec.deps {
                if members.contains(dep.as_str()) {
                    continue;
                }
                let dep_spec = graph.resolve(dep).expect("validated graph");
                if !dep_spec.effective_layout(globals).has_binary() {
                    return Err(GraphError::CrossGroupWithoutBinary {
                        name: spec.name.clone(),
                        group: group.to_string(),
                        dep: dep.clone(),
                    });
                }
                external.insert(dep.clone(), dep_spec.clone());
            }
        }
        out.push((group.to_string(), assemble(specs, external)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExportOverride, OutputLayout};

    fn spec(name: &str, deps: &[&str]) -> RepresentationSpec {
        RepresentationSpec::new(name, "color/rgb", deps)
    }

    #[test]
    fn chain_order() {
        let g = build_graph(&[spec("hsv", &["rgb"]), spec("rgb", &[])]).unwrap();
        assert_eq!(topo_sort(&g), vec!["rgb", "hsv"]);
    }

    #[test]
    fn two_cycle_reported() {
        let err = build_graph(&[spec("a", &["b"]), spec("b", &["a"])]).unwrap_err();
        assert_eq!(err, GraphError::Cycle(vec!["a".into(), "b".into(), "a".into()]));
        assert_eq!(err.to_string(), "dependency cycle: a -> b -> a");
    }

    #[test]
    fn self_cycle() {
        let err = build_graph(&[spec("a", &["a"])]).unwrap_err();
        assert_eq!(err, GraphError::Cycle(vec!["a".into(), "a".into()]));
    }

    #[test]
    fn diamond_tie_broken_by_name() {
        let g = build_graph(&[
            spec("safe", &["depth", "sem"]),
            spec("sem", &["rgb"]),
            spec("depth", &["rgb"]),
            spec("rgb", &[]),
        ])
        .unwrap();
        assert_eq!(topo_sort(&g), vec!["rgb", "depth", "sem", "safe"]);
    }

    #[test]
    fn singletons_and_independent_nodes() {
        assert_eq!(topo_sort(&build_graph(&[spec("x", &[])]).unwrap()), vec!["x"]);
        assert_eq!(
            topo_sort(&build_graph(&[spec("b", &[]), spec("a", &[])]).unwrap()),
            vec!["a", "b"]
        );
    }

    #[test]
    fn unknown_dependency() {
        assert!(matches!(
            build_graph(&[spec("a", &["zz"])]),
            Err(GraphError::UnknownDependency { .. })
        ));
    }

    fn depth_normals_hsv_canny() -> RepresentationGraph {
        build_graph(&[
            spec("rgb", &[]),
            spec("depth", &["rgb"]),
            spec("normals", &["depth"]),
            spec("hsv", &["rgb"]),
            spec("canny", &["rgb"]),
        ])
        .unwrap()
    }

    fn assign(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn partition_into_independent_groups() {
        let g = build_graph(&[
            spec("depth", &[]),
            spec("normals", &["depth"]),
            spec("hsv", &[]),
            spec("canny", &[]),
        ])
        .unwrap();
        let groups = partition_groups(
            &g,
            &assign(&[("depth", "g1"), ("normals", "g1"), ("hsv", "g2"), ("canny", "g2")]),
            &GlobalConfig::default(),
        )
        .unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].1.topo_order(), &["depth", "normals"]);
        assert_eq!(groups[1].1.topo_order(), &["canny", "hsv"]);
        assert!(groups.iter().all(|(_, g)| g.disk_inputs().count() == 0));
    }

    #[test]
    fn single_group_equals_input() {
        let g = depth_normals_hsv_canny();
        let all: BTreeMap<_, _> = g.nodes().map(|s| (s.name.clone(), "g".to_string())).collect();
        let groups = partition_groups(&g, &all, &GlobalConfig::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].1, g);
    }

    #[test]
    fn cross_group_dep_loads_from_disk() {
        let g = depth_normals_hsv_canny();
        let groups = partition_groups(
            &g,
            &assign(&[
                ("rgb", "g2"),
                ("depth", "g2"),
                ("normals", "g1"),
                ("hsv", "g2"),
                ("canny", "g2"),
            ]),
            &GlobalConfig::default(),
        )
        .unwrap();
        let (_, g1) = &groups[0];
        assert_eq!(g1.topo_order(), &["normals"]);
        assert!(g1.is_disk_input("depth"));
    }

    #[test]
    fn partition_errors() {
        let g = depth_normals_hsv_canny();
        assert!(matches!(
            partition_groups(&g, &assign(&[("rgb", "g")]), &GlobalConfig::default()),
            Err(GraphError::Unassigned(_))
        ));
        let mut specs: Vec<_> = g.nodes().cloned().collect();
        for s in &mut specs {
            if s.name == "depth" {
                s.export = ExportOverride {
                    layout: Some(OutputLayout::ImageOnly),
                    compression: None,
                };
            }
        }
        let g = build_graph(&specs).unwrap();
        let err = partition_groups(
            &g,
            &assign(&[
                ("rgb", "a"),
                ("depth", "a"),
                ("normals", "b"),
                ("hsv", "a"),
                ("canny", "a"),
            ]),
            &GlobalConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::CrossGroupWithoutBinary { .. }));
    }

    #[test]
    fn ancestors_subgraph() {
        let g = depth_normals_hsv_canny();
        let sub = g.ancestors_of("normals").unwrap();
        assert_eq!(sub.topo_order(), &["rgb", "depth", "normals"]);
        assert!(g.ancestors_of("nope").is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dag() -> impl Strategy<Value = Vec<RepresentationSpec>> {
            (1usize..12).prop_flat_map(|n| {
                prop::collection::vec(prop::collection::vec(any::<bool>(), n), n).prop_map(
                    move |adj| {
                        // random names so the insertion order is unrelated to the order
                        (0..n)
                            .map(|i| {
                                let deps: Vec<String> = (0..i)
                                    .filter(|&j| adj[i][j])
                                    .map(|j| format!("n{:02}", (j * 7 + 3) % 97))
                                    .collect();
                                let mut s = spec(&format!("n{:02}", (i * 7 + 3) % 97), &[]);
                                s.deps = deps;
                                s
                            })
                            .rev()
                            .collect()
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn every_dep_precedes_its_dependent(specs in dag()) {
                let g = build_graph(&specs).unwrap();
                let order = topo_sort(&g);
                prop_assert_eq!(order.len(), specs.len());
                let pos: BTreeMap<&str, usize> =
                    order.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
                prop_assert_eq!(pos.len(), specs.len());
                for s in &specs {
                    for d in &s.deps {
                        prop_assert!(pos[d.as_str()] < pos[s.name.as_str()]);
                    }
                }
                // pure function of the node set
                let mut shuffled = specs.clone();
                shuffled.reverse();
                prop_assert_eq!(topo_sort(&build_graph(&shuffled).unwrap()), order);
            }

            #[test]
            fn partition_is_disjoint_cover(specs in dag(), seed in any::<u64>()) {
                let g = build_graph(&specs).unwrap();
                let assignment: BTreeMap<String, String> = g
                    .nodes()
                    .enumerate()
                    .map(|(i, s)| (s.name.clone(), format!("g{}", (seed >> (i % 60)) & 3)))
                    .collect();
                let groups = partition_groups(&g, &assignment, &GlobalConfig::default()).unwrap();
                let mut seen = BTreeSet::new();
                for (_, sub) in &groups {
                    for n in sub.nodes() {
                        prop_assert!(seen.insert(n.name.clone()));
                    }
                }
                let all: BTreeSet<String> = g.nodes().map(|s| s.name.clone()).collect();
                prop_assert_eq!(seen, all);
            }
        }
    }
}
