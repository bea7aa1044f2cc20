//! Knowledge-graph ingestion: triple files, entity/relation registries,
//! adjacency, and seed/test alignment sets.
//!
//! Triple files are UTF-8, one `head<TAB>relation<TAB>tail` per line (the
//! `rel_triples` layout common to entity-alignment benchmark dumps).
//! Alignment files are `ent1<TAB>ent2` per line (`ent_links` layout).

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Registry mapping external string identifiers to dense ids in first-seen order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Registry {
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// External names in dense-id order.
    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// One knowledge graph: registries, deduplicated triples, and an undirected,
/// relation-blind adjacency index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeGraph {
    pub entities: Registry,
    pub relations: Registry,
    pub triples: Vec<(u32, u32, u32)>,
    adjacency: Vec<BTreeSet<u32>>,
}

impl KnowledgeGraph {
    /// Parse a triple stream. Registries assign dense ids in first-seen order;
    /// duplicate triples are dropped; adjacency is built symmetric.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut kg = KnowledgeGraph::default();
        let mut seen = BTreeSet::new();
        let mut any = false;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            any = true;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    path: origin.to_string(),
                    line: lineno + 1,
                    expected: 3,
                    found: fields.len(),
                });
            }
            let h = kg.entities.intern(fields[0]);
            let r = kg.relations.intern(fields[1]);
            let t = kg.entities.intern(fields[2]);
            if seen.insert((h, r, t)) {
                kg.triples.push((h, r, t));
            }
        }
        if !any {
            return Err(Error::EmptyInput {
                path: origin.to_string(),
            });
        }
        kg.adjacency = vec![BTreeSet::new(); kg.entities.len()];
        for &(h, _, t) in &kg.triples {
            kg.adjacency[h as usize].insert(t);
            kg.adjacency[t as usize].insert(h);
        }
        Ok(kg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// N(e): neighbor set of `e`, excluding `e` itself unless it has a self-loop.
    /// Callers that need the self-inclusive set add `e` when aggregating.
    pub fn neighbors(&self, e: u32) -> Result<&BTreeSet<u32>> {
        self.adjacency.get(e as usize).ok_or(Error::UnknownEntityId {
            id: e,
            context: "neighbors".to_string(),
        })
    }

    /// Serialize back to triple lines in stored (first-seen) order.
    pub fn to_triple_lines(&self) -> String {
        let mut out = String::new();
        for &(h, r, t) in &self.triples {
            out.push_str(self.entities.name(h).unwrap());
            out.push('\t');
            out.push_str(self.relations.name(r).unwrap());
            out.push('\t');
            out.push_str(self.entities.name(t).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Which partition an alignment set plays in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentRole {
    TrainSeed,
    Validation,
    Test,
}

/// A 1-to-1 set of (G1 entity, G2 entity) pairs with dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSet {
    pub pairs: Vec<(u32, u32)>,
    pub role: AlignmentRole,
}

impl AlignmentSet {
    /// Parse `ent1<TAB>ent2` lines, resolving against both KGs and checking
    /// injectivity on both sides.
    pub fn parse(
        text: &str,
        origin: &str,
        g1: &KnowledgeGraph,
        g2: &KnowledgeGraph,
        role: AlignmentRole,
    ) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut sources = BTreeSet::new();
        let mut targets = BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::MalformedLine {
                    path: origin.to_string(),
                    line: lineno + 1,
                    expected: 2,
                    found: fields.len(),
                });
            }
            let s = g1.entities.get(fields[0]).ok_or_else(|| Error::UnknownEntity {
                name: fields[0].to_string(),
                context: format!("{origin}:{} (G1)", lineno + 1),
            })?;
            let t = g2.entities.get(fields[1]).ok_or_else(|| Error::UnknownEntity {
                name: fields[1].to_string(),
                context: format!("{origin}:{} (G2)", lineno + 1),
            })?;
            if !sources.insert(s) {
                return Err(Error::DuplicateAlignment {
                    side: "source",
                    name: fields[0].to_string(),
                });
            }
            if !targets.insert(t) {
                return Err(Error::DuplicateAlignment {
                    side: "target",
                    name: fields[1].to_string(),
                });
            }
            pairs.push((s, t));
        }
        Ok(AlignmentSet { pairs, role })
    }

    pub fn load(
        path: &Path,
        g1: &KnowledgeGraph,
        g2: &KnowledgeGraph,
        role: AlignmentRole,
    ) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), g1, g2, role)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<u32> {
        self.pairs.iter().map(|&(s, _)| s).collect()
    }

    pub fn targets(&self) -> Vec<u32> {
        self.pairs.iter().map(|&(_, t)| t).collect()
    }

    /// Serialize back to `ent1<TAB>ent2` lines.
    pub fn to_link_lines(&self, g1: &KnowledgeGraph, g2: &KnowledgeGraph) -> String {
        let mut out = String::new();
        for &(s, t) in &self.pairs {
            out.push_str(g1.entities.name(s).unwrap());
            out.push('\t');
            out.push_str(g2.entities.name(t).unwrap());
            out.push('\n');
        }
        out
    }
}
