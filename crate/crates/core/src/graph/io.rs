//! JSONL node/edge files.
//!
//! `nodes.jsonl`: `{"id", "side", "title", "skills", "industries", "label"}` per line.
//! `edges.jsonl`: `{"member", "job"}` per line.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BipartiteGraph, Channel, ChannelKind, ChannelSpec, GraphParts, Side};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: String,
    pub side: Side,
    #[serde(default)]
    pub title: Option<u32>,
    #[serde(default)]
    pub skills: Vec<u32>,
    #[serde(default)]
    pub industries: Vec<u32>,
    #[serde(default)]
    pub label: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub member: String,
    pub job: String,
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn spec_for<'a>(schema: &'a [ChannelSpec], name: &str, kind: ChannelKind) -> Result<&'a ChannelSpec> {
    schema
        .iter()
        .find(|s| s.name == name && s.kind == kind)
        .ok_or_else(|| Error::Config(format!("schema lacks a {kind:?} channel named {name:?}")))
}

/// Loads a graph. `schema` must name a lookup channel `title` and multi-hot
/// channels `skills` and `industries`; a title vocabulary of 0 is inferred as
/// one past the largest id. Members and jobs are numbered in file order.
pub fn load_graph(nodes_path: &Path, edges_path: &Path, schema: &[ChannelSpec]) -> Result<BipartiteGraph> {
    let title_spec = spec_for(schema, "title", ChannelKind::EmbeddingLookup)?;
    let skill_spec = spec_for(schema, "skills", ChannelKind::MultiHot)?;
    let ind_spec = spec_for(schema, "industries", ChannelKind::MultiHot)?;

    let records: Vec<(usize, NodeRecord)> = read_lines(nodes_path)?;
    let mut seen = HashMap::new();
    let (mut members, mut jobs) = (Vec::new(), Vec::new());
    for (line, rec) in records {
        if seen.insert(rec.id.clone(), ()).is_some() {
            return Err(Error::DuplicateNode(rec.id));
        }
        for (vals, spec) in [(&rec.skills, skill_spec), (&rec.industries, ind_spec)] {
            if let Some(&bad) = vals.iter().find(|&&v| v as usize >= spec.dim) {
                return Err(Error::IndexOutOfRange {
                    node: rec.id.clone(),
                    channel: spec.name.clone(),
                    index: bad as usize,
                    dim: spec.dim,
                });
            }
        }
        if let Some(l) = rec.label {
            if l > 1 {
                return Err(Error::Parse {
                    path: nodes_path.to_path_buf(),
                    line,
                    msg: format!("label must be 0, 1 or null, got {l}"),
                });
            }
        }
        match rec.side {
            Side::Member => members.push(rec),
            Side::Job => jobs.push(rec),
        }
    }
    let (n_members, n_jobs) = (members.len(), jobs.len());
    let nodes: Vec<NodeRecord> = members.into_iter().chain(jobs).collect();
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(f, r)| (r.id.as_str(), f)).collect();

    let mut title = title_spec.clone();
    if title.vocab == 0 {
        title.vocab = nodes.iter().filter_map(|r| r.title).max().map_or(1, |m| m as usize + 1);
    }
    if let Some(r) = nodes.iter().find(|r| r.title.is_some_and(|t| t as usize >= title.vocab)) {
        return Err(Error::IndexOutOfRange {
            node: r.id.clone(),
            channel: "title".into(),
            index: r.title.unwrap() as usize,
            dim: title.vocab,
        });
    }

    let empty = |r: &NodeRecord| r.title.is_none() && r.skills.is_empty() && r.industries.is_empty();
    let titles = nodes.iter().map(|r| r.title).collect();
    let skills = nodes
        .iter()
        .map(|r| (!empty(r)).then(|| r.skills.clone()))
        .collect();
    let industries = nodes
        .iter()
        .map(|r| (!empty(r)).then(|| r.industries.clone()))
        .collect();

    let mut edges = Vec::new();
    for (line, e) in read_lines::<EdgeRecord>(edges_path)? {
        let lookup = |id: &str, side: Side| -> Result<u32> {
            match index.get(id) {
                Some(&f) if (f < n_members) == (side == Side::Member) => {
                    Ok(if side == Side::Member { f } else { f - n_members } as u32)
                }
                Some(_) => Err(Error::Parse {
                    path: edges_path.to_path_buf(),
                    line,
                    msg: format!("node {id:?} is not a {side}"),
                }),
                None => Err(Error::UnknownNode {
                    line,
                    id: id.to_string(),
                }),
            }
        };
        edges.push((lookup(&e.member, Side::Member)?, lookup(&e.job, Side::Job)?));
    }
    let labels = nodes.iter().map(|r| r.label).collect();
    let ids = nodes.into_iter().map(|r| r.id).collect();
    BipartiteGraph::from_parts(GraphParts {
        n_members,
        n_jobs,
        edges,
        channels: vec![
            Channel::lookup(title, titles)?,
            Channel::multi_hot(skill_spec.clone(), skills)?,
            Channel::multi_hot(ind_spec.clone(), industries)?,
        ],
        labels,
        ids,
    })
}

/// Writes the graph in the JSONL schema. Unobserved channels are written as
/// `null` / `[]`; channels other than title/skills/industries are not stored.
pub fn save_graph(g: &BipartiteGraph, nodes_path: &Path, edges_path: &Path) -> Result<()> {
    let title = g.channel("title").ok();
    let skills = g.channel("skills").ok();
    let industries = g.channel("industries").ok();
    let mut w = BufWriter::new(File::create(nodes_path).map_err(|e| Error::io(nodes_path, e))?);
    for f in 0..g.n_nodes() {
        let rec = NodeRecord {
            id: g.id(f).to_string(),
            side: g.side(f),
            title: title.and_then(|c| c.lookup_id(f)),
            skills: skills.map(|c| c.indices(f).to_vec()).unwrap_or_default(),
            industries: industries.map(|c| c.indices(f).to_vec()).unwrap_or_default(),
            label: g.label(f),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(nodes_path, e))?;
    }
    w.flush().map_err(|e| Error::io(nodes_path, e))?;

    let mut w = BufWriter::new(File::create(edges_path).map_err(|e| Error::io(edges_path, e))?);
    for &(m, j) in g.edges() {
        let rec = EdgeRecord {
            member: g.id(m as usize).to_string(),
            job: g.id(g.n_members() + j as usize).to_string(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(edges_path, e))?;
    Ok(())
}
