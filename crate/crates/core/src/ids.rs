//! Small copyable identifiers shared across the simulator.

use std::fmt;

/// Simulation time in seconds.
pub type Seconds = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(pub u64);

/// Index into the world's server table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServerId(pub usize);

/// Endpoint or server position in the topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Uac(usize),
    Server(ServerId),
}

impl NodeId {
    pub fn as_server(&self) -> Option<ServerId> {
        match self {
            NodeId::Server(s) => Some(*s),
            NodeId::Uac(_) => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Uac(i) => write!(f, "uac{i}"),
            NodeId::Server(ServerId(i)) => write!(f, "s{i}"),
        }
    }
}
