use serde::{Deserialize, Serialize};

/// Summary of the walk at the return time `T_k` (usually `k = 1`).
///
/// `z1_*` and `max_edge_lt_below_z1` refer to the optional line at that
/// return time. When `truncated` is set the exploration hit its budget and
/// every maximum is a lower bound.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    pub k: u64,
    pub max_edge_lt: u64,
    pub max_site_lt: u64,
    pub z1_size: u64,
    pub z1_min_depth: u32,
    pub z1_max_depth: u32,
    pub range_depth: u32,
    pub duration: u64,
    pub max_edge_lt_below_z1: u64,
    pub truncated: bool,
}

impl ExcursionRecord {
    pub const CSV_HEADER: &'static str = "k,max_edge_lt,max_site_lt,z1_size,z1_min_depth,z1_max_depth,range_depth,duration,max_edge_lt_below_z1,truncated";

    pub fn line(&self) -> LineRecord {
        LineRecord {
            size: self.z1_size,
            min_depth: self.z1_min_depth,
            max_depth: self.z1_max_depth,
            max_edge_lt_below: self.max_edge_lt_below_z1,
            truncated: self.truncated,
        }
    }
}

/// The part of an excursion up to and including the optional line.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineRecord {
    pub size: u64,
    pub min_depth: u32,
    pub max_depth: u32,
    pub max_edge_lt_below: u64,
    pub truncated: bool,
}
