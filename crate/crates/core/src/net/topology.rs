//! Dumbbell and two-tier Clos builders plus shortest-path ECMP tables.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{serialization_delay, NodeId};
use crate::engine::SimTime;
use crate::error::SimError;
use crate::net::packet::{FiveTuple, Ip, CONTROL_PACKET_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// All hosts on one switch.
    Star,
    Dumbbell,
    Clos2Tier,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Tor,
    Core,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Host { tor: NodeId },
    Switch { layer: Layer },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub speed_bits_per_s: u64,
    pub propagation_delay: SimTime,
    pub endpoints: (NodeId, NodeId),
}

impl Link {
    pub fn serialization(&self, bytes: u32) -> SimTime {
        serialization_delay(bytes, self.speed_bits_per_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Port {
    pub peer: NodeId,
    pub peer_port: u16,
    pub link: usize,
}

/// Fields missing from a config file take the defaults of its preset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(from = "RawTopology")]
pub struct TopologyParams {
    pub preset: Preset,
    pub hosts_per_tor: u32,
    pub n_tors: u32,
    pub n_cores: u32,
    pub host_link_gbps: f64,
    /// Inter-switch link speed. Dumbbell defaults to full bisection.
    pub core_link_gbps: Option<f64>,
    /// Parallel links between each ToR/core pair; defaults to the count
    /// that avoids oversubscription.
    pub links_per_core: Option<u32>,
    pub host_link_delay_ns: u64,
    pub core_link_delay_ns: u64,
    /// Added to every packet leaving a switch.
    pub switch_latency_ns: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    preset: Option<Preset>,
    hosts_per_tor: Option<u32>,
    n_tors: Option<u32>,
    n_cores: Option<u32>,
    host_link_gbps: Option<f64>,
    core_link_gbps: Option<f64>,
    links_per_core: Option<u32>,
    host_link_delay_ns: Option<u64>,
    core_link_delay_ns: Option<u64>,
    switch_latency_ns: Option<u64>,
}

impl From<RawTopology> for TopologyParams {
    fn from(r: RawTopology) -> Self {
        let preset = r.preset.unwrap_or(Preset::Clos2Tier);
        let d = match preset {
            Preset::Star => Self::star(r.hosts_per_tor.unwrap_or(16)),
            Preset::Dumbbell => Self::dumbbell(r.hosts_per_tor.unwrap_or(64)),
            Preset::Clos2Tier | Preset::Custom => Self { preset, ..Self::clos_small() },
        };
        Self {
            preset,
            hosts_per_tor: r.hosts_per_tor.unwrap_or(d.hosts_per_tor),
            n_tors: r.n_tors.unwrap_or(d.n_tors),
            n_cores: r.n_cores.unwrap_or(d.n_cores),
            host_link_gbps: r.host_link_gbps.unwrap_or(d.host_link_gbps),
            core_link_gbps: r.core_link_gbps.or(d.core_link_gbps),
            links_per_core: r.links_per_core.or(d.links_per_core),
            host_link_delay_ns: r.host_link_delay_ns.unwrap_or(d.host_link_delay_ns),
            core_link_delay_ns: r.core_link_delay_ns.unwrap_or(d.core_link_delay_ns),
            switch_latency_ns: r.switch_latency_ns.unwrap_or(d.switch_latency_ns),
        }
    }
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self::clos_small()
    }
}

impl TopologyParams {
    /// 64 hosts per side, 100G links, 10us NIC-to-NIC RTT.
    pub fn dumbbell(hosts_per_side: u32) -> Self {
        Self {
            preset: Preset::Dumbbell,
            hosts_per_tor: hosts_per_side,
            n_tors: 2,
            n_cores: 0,
            host_link_gbps: 100.0,
            core_link_gbps: None,
            links_per_core: None,
            host_link_delay_ns: 1_000,
            core_link_delay_ns: 1_500,
            switch_latency_ns: 500,
        }
    }

    /// One switch with `hosts` attached hosts.
    pub fn star(hosts: u32) -> Self {
        Self {
            preset: Preset::Star,
            hosts_per_tor: hosts,
            n_tors: 1,
            ..Self::dumbbell(hosts)
        }
    }

    /// Small Clos: 4 ToRs x 16 hosts, 2 cores, 100G/400G, 10us RTT.
    pub fn clos_small() -> Self {
        Self {
            preset: Preset::Clos2Tier,
            hosts_per_tor: 16,
            n_tors: 4,
            n_cores: 2,
            host_link_gbps: 100.0,
            core_link_gbps: Some(400.0),
            links_per_core: None,
            host_link_delay_ns: 1_000,
            core_link_delay_ns: 1_500,
            switch_latency_ns: 0,
        }
    }

    pub fn host_link_bps(&self) -> u64 {
        gbps(self.host_link_gbps)
    }
}

fn gbps(g: f64) -> u64 {
    (g * 1e9).round() as u64
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub preset: Preset,
    pub nodes: Vec<NodeKind>,
    pub links: Vec<Link>,
    pub ports: Vec<Vec<Port>>,
    pub n_hosts: u32,
    pub switch_latency: SimTime,
    /// `routes[switch_index][dst_host]` lists equal-cost egress ports.
    routes: Vec<Vec<Vec<u16>>>,
}

impl Topology {
    pub fn build(params: &TopologyParams) -> Result<Self, SimError> {
        if params.hosts_per_tor == 0 || params.n_tors == 0 {
            return Err(SimError::Config("topology needs at least one host and one ToR".into()));
        }
        if params.host_link_gbps <= 0.0 {
            return Err(SimError::Config("link speed must be positive".into()));
        }
        let host_bps = params.host_link_bps();
        let host_delay = SimTime(params.host_link_delay_ns);
        let core_delay = SimTime(params.core_link_delay_ns);
        let mut b = Builder::default();
        let n_hosts = params.hosts_per_tor * params.n_tors;
        for _ in 0..n_hosts {
            // Placeholder tor, patched below.
            b.nodes.push(NodeKind::Host { tor: NodeId(0) });
            b.ports.push(Vec::new());
        }
        let tors: Vec<NodeId> = (0..params.n_tors).map(|_| b.add_switch(Layer::Tor)).collect();
        for h in 0..n_hosts {
            let tor = tors[(h / params.hosts_per_tor) as usize];
            b.nodes[h as usize] = NodeKind::Host { tor };
            b.connect(NodeId(h), tor, host_bps, host_delay);
        }
        match params.preset {
            Preset::Star => {
                if params.n_tors != 1 {
                    return Err(SimError::Config("star needs exactly 1 switch".into()));
                }
            }
            Preset::Dumbbell => {
                if params.n_tors != 2 {
                    return Err(SimError::Config("dumbbell needs exactly 2 ToRs".into()));
                }
                let speed = params
                    .core_link_gbps
                    .map(gbps)
                    .unwrap_or(host_bps * params.hosts_per_tor as u64);
                let n = params.links_per_core.unwrap_or(1).max(1);
                for _ in 0..n {
                    b.connect(tors[0], tors[1], speed, core_delay);
                }
            }
            Preset::Clos2Tier | Preset::Custom => {
                if params.n_cores == 0 {
                    return Err(SimError::Config("Clos needs at least one core switch".into()));
                }
                let speed = params.core_link_gbps.map(gbps).unwrap_or(host_bps * 4);
                let down = host_bps * params.hosts_per_tor as u64;
                let up_per_pair = speed * params.n_cores as u64;
                let n = params
                    .links_per_core
                    .unwrap_or_else(|| down.div_ceil(up_per_pair) as u32)
                    .max(1);
                let cores: Vec<NodeId> =
                    (0..params.n_cores).map(|_| b.add_switch(Layer::Core)).collect();
                for &t in &tors {
                    for &c in &cores {
                        for _ in 0..n {
                            b.connect(t, c, speed, core_delay);
                        }
                    }
                }
            }
        }
        let mut topo = Topology {
            preset: params.preset,
            nodes: b.nodes,
            links: b.links,
            ports: b.ports,
            n_hosts,
            switch_latency: SimTime(params.switch_latency_ns),
            routes: Vec::new(),
        };
        topo.compute_routes()?;
        Ok(topo)
    }

    pub fn n_switches(&self) -> usize {
        self.nodes.len() - self.n_hosts as usize
    }

    pub fn is_host(&self, n: NodeId) -> bool {
        n.0 < self.n_hosts
    }

    pub fn switch_index(&self, n: NodeId) -> usize {
        (n.0 - self.n_hosts) as usize
    }

    pub fn switch_node(&self, index: usize) -> NodeId {
        NodeId(self.n_hosts + index as u32)
    }

    pub fn host_tor(&self, h: Ip) -> NodeId {
        match self.nodes[h as usize] {
            NodeKind::Host { tor } => tor,
            NodeKind::Switch { .. } => panic!("node {h} is not a host"),
        }
    }

    pub fn layer(&self, n: NodeId) -> Option<Layer> {
        match self.nodes[n.0 as usize] {
            NodeKind::Switch { layer } => Some(layer),
            NodeKind::Host { .. } => None,
        }
    }

    pub fn port(&self, n: NodeId, port: u16) -> &Port {
        &self.ports[n.0 as usize][port as usize]
    }

    pub fn link_of(&self, n: NodeId, port: u16) -> &Link {
        &self.links[self.port(n, port).link]
    }

    /// True for a ToR port whose peer is a host.
    pub fn is_server_facing(&self, n: NodeId, port: u16) -> bool {
        self.layer(n) == Some(Layer::Tor) && self.is_host(self.port(n, port).peer)
    }

    /// Port on `tor` that leads to its attached host `h`, if any.
    pub fn host_port_on(&self, tor: NodeId, h: Ip) -> Option<u16> {
        self.ports[tor.0 as usize]
            .iter()
            .position(|p| p.peer == NodeId(h))
            .map(|p| p as u16)
    }

    /// Equal-cost egress ports at `sw` towards host `dst`.
    pub fn candidates(&self, sw: NodeId, dst: Ip) -> &[u16] {
        &self.routes[self.switch_index(sw)][dst as usize]
    }

    /// ECMP: a deterministic hash of the 5-tuple picks among equal-cost ports.
    /// Returns `None` if `dst` is unreachable.
    pub fn route(&self, sw: NodeId, tuple: &FiveTuple) -> Option<u16> {
        let c = self.routes[self.switch_index(sw)].get(tuple.dst_ip as usize)?;
        match c.len() {
            0 => None,
            1 => Some(c[0]),
            n => Some(c[(tuple.hash_with(sw.0 as u64) % n as u64) as usize]),
        }
    }

    fn compute_routes(&mut self) -> Result<(), SimError> {
        let n = self.nodes.len();
        let mut routes = vec![vec![Vec::new(); self.n_hosts as usize]; self.n_switches()];
        let mut dist = vec![u32::MAX; n];
        for dst in 0..self.n_hosts {
            dist.iter_mut().for_each(|d| *d = u32::MAX);
            dist[dst as usize] = 0;
            let mut q = VecDeque::from([NodeId(dst)]);
            while let Some(u) = q.pop_front() {
                // Hosts are never transit nodes.
                if self.is_host(u) && u.0 != dst {
                    continue;
                }
                for p in &self.ports[u.0 as usize] {
                    if dist[p.peer.0 as usize] == u32::MAX {
                        dist[p.peer.0 as usize] = dist[u.0 as usize] + 1;
                        q.push_back(p.peer);
                    }
                }
            }
            for s in 0..self.n_switches() {
                let sw = self.switch_node(s);
                let d = dist[sw.0 as usize];
                if d == u32::MAX {
                    return Err(SimError::Config(format!(
                        "switch {} cannot reach host {dst}",
                        sw.0
                    )));
                }
                routes[s][dst as usize] = self.ports[sw.0 as usize]
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| {
                        let pd = dist[p.peer.0 as usize];
                        pd != u32::MAX
                            && pd + 1 == d
                            && (!self.is_host(p.peer) || p.peer.0 == dst)
                    })
                    .map(|(i, _)| i as u16)
                    .collect();
            }
        }
        self.routes = routes;
        Ok(())
    }

    /// Hops `(node, egress_port)` from host `src` to host `dst` along the
    /// first equal-cost choice at each switch.
    pub fn path(&self, src: Ip, dst: Ip) -> Vec<(NodeId, u16)> {
        let mut hops = vec![(NodeId(src), 0u16)];
        let mut at = self.port(NodeId(src), 0).peer;
        while at.0 != dst {
            let port = self.candidates(at, dst)[0];
            hops.push((at, port));
            at = self.port(at, port).peer;
        }
        hops
    }

    /// Number of links traversed from `src` to `dst`.
    pub fn hop_count(&self, src: Ip, dst: Ip) -> usize {
        self.path(src, dst).len()
    }

    /// Propagation plus switch latency from `src` to `dst`, no serialization.
    pub fn propagation_one_way(&self, src: Ip, dst: Ip) -> SimTime {
        self.path(src, dst)
            .iter()
            .map(|&(n, p)| {
                let lat = if self.is_host(n) { SimTime::ZERO } else { self.switch_latency };
                self.link_of(n, p).propagation_delay + lat
            })
            .fold(SimTime::ZERO, |a, b| a + b)
    }

    /// Store-and-forward latency of one `bytes`-sized packet on an idle path.
    pub fn one_way(&self, src: Ip, dst: Ip, bytes: u32) -> SimTime {
        self.path(src, dst)
            .iter()
            .map(|&(n, p)| self.link_of(n, p).serialization(bytes))
            .fold(self.propagation_one_way(src, dst), |a, b| a + b)
    }

    /// MTU data packet out, control-sized ACK back.
    pub fn base_rtt(&self, a: Ip, b: Ip, mtu: u32) -> SimTime {
        self.one_way(a, b, mtu) + self.one_way(b, a, CONTROL_PACKET_BYTES)
    }

    /// Pure propagation round trip.
    pub fn propagation_rtt(&self, a: Ip, b: Ip) -> SimTime {
        self.propagation_one_way(a, b) + self.propagation_one_way(b, a)
    }

    pub fn host_link(&self, h: Ip) -> &Link {
        self.link_of(NodeId(h), 0)
    }

    /// A host on a different ToR than `h`, if one exists.
    pub fn remote_host(&self, h: Ip) -> Option<Ip> {
        let tor = self.host_tor(h);
        (0..self.n_hosts).find(|&o| self.host_tor(o) != tor)
    }
}

#[derive(Default)]
struct Builder {
    nodes: Vec<NodeKind>,
    links: Vec<Link>,
    ports: Vec<Vec<Port>>,
}

impl Builder {
    fn add_switch(&mut self, layer: Layer) -> NodeId {
        self.nodes.push(NodeKind::Switch { layer });
        self.ports.push(Vec::new());
        NodeId(self.nodes.len() as u32 - 1)
    }

    fn connect(&mut self, a: NodeId, b: NodeId, speed: u64, delay: SimTime) {
        let link = self.links.len();
        self.links.push(Link {
            speed_bits_per_s: speed,
            propagation_delay: delay,
            endpoints: (a, b),
        });
        let pa = self.ports[a.0 as usize].len() as u16;
        let pb = self.ports[b.0 as usize].len() as u16;
        self.ports[a.0 as usize].push(Port {
            peer: b,
            peer_port: pb,
            link,
        });
        self.ports[b.0 as usize].push(Port {
            peer: a,
            peer_port: pa,
            link,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_fields_follow_the_preset() {
        let t: TopologyParams = toml::from_str("preset = \"dumbbell\"\nhosts_per_tor = 8\n").unwrap();
        assert_eq!(t, TopologyParams::dumbbell(8));
        let t: TopologyParams = toml::from_str("").unwrap();
        assert_eq!(t, TopologyParams::clos_small());
        let t: TopologyParams = toml::from_str("preset = \"star\"\nswitch_latency_ns = 7\n").unwrap();
        assert_eq!((t.n_tors, t.switch_latency_ns), (1, 7));
        assert!(toml::from_str::<TopologyParams>("speed = 1\n").is_err());
        let back: TopologyParams = toml::from_str(&toml::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn dumbbell_rtt_is_ten_microseconds() {
        let t = Topology::build(&TopologyParams::dumbbell(64)).unwrap();
        assert_eq!(t.n_hosts, 128);
        assert_eq!(t.hop_count(0, 64), 3);
        // 2 x (1 + 0.5 + 1.5 + 0.5 + 1) us of propagation and pipeline.
        assert_eq!(t.propagation_rtt(0, 64), SimTime::from_micros(9));
        // Plus 3 x 320ns of MTU store-and-forward on 100G hops (the
        // 6.4T core hop adds 5ns) and a few ns for the 64B ACK.
        let rtt = t.base_rtt(0, 64, 4000);
        assert_eq!(rtt.as_nanos(), 9_000 + 320 + 5 + 320 + 6 + 1 + 6);
        assert!((rtt.as_micros_f64() - 10.0).abs() < 0.5);
    }

    #[test]
    fn clos_inter_rack_is_three_switch_hops() {
        let p = TopologyParams {
            n_tors: 2,
            n_cores: 1,
            ..TopologyParams::clos_small()
        };
        let t = Topology::build(&p).unwrap();
        // host, tor, core, tor
        assert_eq!(t.path(0, 16).len(), 4);
        assert_eq!(t.propagation_rtt(0, 16), SimTime::from_micros(10));
        assert_eq!(t.base_rtt(0, 16, 4000), t.base_rtt(16, 0, 4000));
    }

    #[test]
    fn clos_default_is_not_oversubscribed() {
        let t = Topology::build(&TopologyParams::clos_small()).unwrap();
        let tor = t.host_tor(0);
        let up: u64 = t.ports[tor.0 as usize]
            .iter()
            .filter(|p| !t.is_host(p.peer))
            .map(|p| t.links[p.link].speed_bits_per_s)
            .sum();
        assert!(up >= 16 * 100_000_000_000);
    }

    #[test]
    fn rejects_empty_topologies() {
        let p = TopologyParams {
            hosts_per_tor: 0,
            ..TopologyParams::clos_small()
        };
        assert!(Topology::build(&p).is_err());
        let p = TopologyParams {
            n_cores: 0,
            ..TopologyParams::clos_small()
        };
        assert!(Topology::build(&p).is_err());
    }

    #[test]
    fn server_facing_ports() {
        let t = Topology::build(&TopologyParams::dumbbell(2)).unwrap();
        let tor = t.host_tor(0);
        assert!(t.is_server_facing(tor, t.host_port_on(tor, 0).unwrap()));
        let up = t.candidates(tor, 2)[0];
        assert!(!t.is_server_facing(tor, up));
    }
}
