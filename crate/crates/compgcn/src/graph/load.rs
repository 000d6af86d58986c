//! Tab-separated triple ingestion and write-back.
//!
//! A dataset directory holds `train.txt`, `valid.txt`, and `test.txt`,
//! each line `subject<TAB>relation<TAB>object` (UTF-8, LF or CRLF).
//! Entity and relation ids are assigned by first appearance scanning
//! train, then valid, then test.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{MultiRelGraph, Split, Triple};
use crate::error::{Error, Result};

/// Result of loading a dataset directory.
#[derive(Debug)]
pub struct LoadReport {
    pub graph: MultiRelGraph,
    /// Entities first seen in valid or test: they get embeddings but no
    /// incident train edges beyond the self-loop.
    pub entities_only_in_eval: usize,
}

struct Vocab {
    ids: HashMap<String, usize>,
    names: Vec<String>,
}

impl Vocab {
    fn new() -> Self {
        Vocab {
            ids: HashMap::new(),
            names: Vec::new(),
        }
    }

    fn intern(&mut self, name: &str) -> (usize, bool) {
        if let Some(&id) = self.ids.get(name) {
            (id, false)
        } else {
            let id = self.names.len();
            self.ids.insert(name.to_string(), id);
            self.names.push(name.to_string());
            (id, true)
        }
    }
}

fn parse_file(
    path: &Path,
    split: Split,
    entities: &mut Vocab,
    relations: &mut Vocab,
    triples: &mut Vec<(Triple, Split)>,
    fresh_eval_entities: &mut usize,
) -> Result<()> {
    let text = fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (s, r, o) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(r), Some(o), None) if !s.is_empty() && !r.is_empty() && !o.is_empty() => {
                (s, r, o)
            }
            _ => {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: "expected `subject<TAB>relation<TAB>object`".into(),
                })
            }
        };
        let (sid, s_new) = entities.intern(s);
        let (rid, _) = relations.intern(r);
        let (oid, o_new) = entities.intern(o);
        if split != Split::Train {
            *fresh_eval_entities += usize::from(s_new) + usize::from(o_new);
        }
        triples.push((
            Triple {
                subject: sid,
                relation: rid,
                object: oid,
            },
            split,
        ));
    }
    Ok(())
}

/// Loads `train.txt` / `valid.txt` / `test.txt` from `dir`.
pub fn load_dir(dir: &Path) -> Result<LoadReport> {
    let mut entities = Vocab::new();
    let mut relations = Vocab::new();
    let mut triples = Vec::new();
    let mut fresh_eval_entities = 0usize;
    for split in Split::ALL {
        let path = dir.join(format!("{}.txt", split.name()));
        parse_file(
            &path,
            split,
            &mut entities,
            &mut relations,
            &mut triples,
            &mut fresh_eval_entities,
        )?;
        if split == Split::Train && triples.is_empty() {
            return Err(Error::InvalidGraph(format!(
                "empty training split in {}",
                dir.display()
            )));
        }
    }
    let graph = MultiRelGraph::new(
        entities.names.len(),
        relations.names,
        Some(entities.names),
        triples,
    )?;
    Ok(LoadReport {
        graph,
        entities_only_in_eval: fresh_eval_entities,
    })
}

/// Writes the graph back out in the same three-file layout. Uses entity
/// names when present, otherwise the numeric ids.
pub fn write_dir(graph: &MultiRelGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let entity_label = |id: usize| -> String {
        match graph.entity_names() {
            Some(names) => names[id].clone(),
            None => id.to_string(),
        }
    };
    for split in Split::ALL {
        let mut out = fs::File::create(dir.join(format!("{}.txt", split.name())))?;
        for t in graph.split_triples(split) {
            writeln!(
                out,
                "{}\t{}\t{}",
                entity_label(t.subject),
                graph.relations()[t.relation],
                entity_label(t.object)
            )?;
        }
    }
    Ok(())
}

/// Dumps `entities.tsv` and `relations.tsv` (id, label) tables.
pub fn write_id_maps(graph: &MultiRelGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut ents = fs::File::create(dir.join("entities.tsv"))?;
    for id in 0..graph.num_entities() {
        let label = match graph.entity_names() {
            Some(names) => names[id].clone(),
            None => id.to_string(),
        };
        writeln!(ents, "{id}\t{label}")?;
    }
    let mut rels = fs::File::create(dir.join("relations.tsv"))?;
    for (id, name) in graph.relations().iter().enumerate() {
        writeln!(rels, "{id}\t{name}")?;
    }
    Ok(())
}
