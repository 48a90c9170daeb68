//! Synthetic multivariate player network: nodes are players, links join
//! players mostly within the same club, and every node carries one string
//! attribute (`club`) plus numeric match statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{AttrValue, GraphDocument, LinkRecord, NodeId, NodeRecord};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("{links} links requested but {nodes} nodes allow at most {max}")]
    TooManyLinks { nodes: usize, links: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub nodes: usize,
    pub links: usize,
    pub attrs: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { nodes: 95, links: 1046, attrs: 39, seed: 7 }
    }
}

const ATTRIBUTE_NAMES: [&str; 39] = [
    "club", "appearances", "minutesPlayed", "passAccuracy", "goals", "assists", "shots",
    "shotsOnTarget", "keyPasses", "dribbles", "tackles", "interceptions", "clearances", "blocks",
    "aerialsWon", "foulsCommitted", "foulsSuffered", "yellowCards", "redCards", "offsides",
    "crosses", "longBalls", "throughBalls", "passesCompleted", "passesAttempted", "touches",
    "dispossessed", "errors", "saves", "cleanSheets", "goalsConceded", "age", "height", "weight",
    "marketValue", "distanceCovered", "sprints", "rating", "starts",
];

/// Players per club on average.
const CLUB_SIZE: usize = 16;
/// Share of links drawn from same-club pairs.
const CLUB_LINK_SHARE: f64 = 0.8;

pub fn attribute_name(k: usize) -> String {
    ATTRIBUTE_NAMES.get(k).map(|s| (*s).to_owned()).unwrap_or_else(|| format!("attr{k}"))
}

/// Generates a graph document with exactly the requested counts. Node
/// positions are left unset.
pub fn generate(spec: &SynthSpec) -> Result<GraphDocument, SynthError> {
    let n = spec.nodes;
    let max = n.saturating_mul(n.saturating_sub(1)) / 2;
    if spec.links > max {
        return Err(SynthError::TooManyLinks { nodes: n, links: spec.links, max });
    }
    let mut rng = SplitMix64::new(spec.seed);
    let clubs = (n / CLUB_SIZE).max(1);
    let club_of: Vec<usize> = (0..n).map(|_| rng.below(clubs as u64) as usize).collect();

    let nodes: Vec<NodeRecord> = (0..n)
        .map(|i| {
            let mut attrs = BTreeMap::new();
            for k in 0..spec.attrs {
                let name = attribute_name(k);
                let value = match name.as_str() {
                    "club" => AttrValue::Str(format!("club{:02}", club_of[i])),
                    "minutesPlayed" => AttrValue::Num((rng.next_f64() * 1170.0).round()),
                    "passAccuracy" => AttrValue::Num((rng.range_f64(60.0, 95.0) * 10.0).round() / 10.0),
                    _ => AttrValue::Num((rng.next_f64() * 100.0).round()),
                };
                attrs.insert(name, value);
            }
            NodeRecord { id: node_id(i), pos: None, attrs }
        })
        .collect();

    let mut chosen: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut same_club: Vec<(usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if club_of[a] == club_of[b] {
                same_club.push((a, b));
            }
        }
    }
    shuffle(&mut same_club, &mut rng);
    let club_quota = ((spec.links as f64 * CLUB_LINK_SHARE) as usize).min(same_club.len());
    chosen.extend(same_club.iter().take(club_quota).copied());

    let cross_available = max - same_club.len();
    let mut leftovers = same_club[club_quota..].iter().copied();
    while chosen.len() < spec.links {
        if chosen.len() - club_quota >= cross_available {
            let pair = leftovers.next().expect("link count is bounded by the pair count");
            chosen.insert(pair);
            continue;
        }
        let a = rng.below(n as u64) as usize;
        let b = rng.below(n as u64) as usize;
        if a == b || club_of[a] == club_of[b] {
            continue;
        }
        chosen.insert((a.min(b), a.max(b)));
    }

    let links = chosen
        .into_iter()
        .map(|(a, b)| LinkRecord { source: node_id(a), target: node_id(b) })
        .collect();
    Ok(GraphDocument { directed: false, nodes, links })
}

fn node_id(i: usize) -> NodeId {
    NodeId(format!("n{}", i + 1))
}

fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
