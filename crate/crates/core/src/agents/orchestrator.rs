use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    derive_seed, DefaultAgent, DscAgent, InspireAgent, InspireSettings, RoundMessage, StrategyKind, ThompsonAgent,
};
use crate::channel::{ChannelError, ChannelOracle};
use crate::consensus::{aggregate_for, Prescription};
use crate::harness::{starvation_count, RewardBounds};
use crate::reward::{global_reward, selfish_reward};
use crate::topology::{compute_neighborhoods, Configuration, JointConfiguration, NeighborhoodMap};

const LOSS_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct OrchestratorSettings {
    pub strategy: StrategyKind,
    pub seed: u64,
    /// Probability that a message to another AP is dropped.
    pub loss_prob: f64,
    pub inspire: InspireSettings,
}

impl OrchestratorSettings {
    pub fn new(strategy: StrategyKind, seed: u64) -> Self {
        OrchestratorSettings {
            strategy,
            seed,
            loss_prob: 0.0,
            inspire: InspireSettings::default(),
        }
    }
}

/// What happened in one round, before regret is known.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// 1-based round index.
    pub iteration: usize,
    pub joint: JointConfiguration,
    pub global_reward: f64,
    pub normalized_reward: f64,
    pub starving_count: usize,
    pub cumulated_throughput: f64,
    /// Agents that skipped their update for lack of a report.
    pub invalid_agents: usize,
}

/// Message flow of the last INSPIRE round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundTrace {
    pub prescriptions: Vec<Prescription>,
    /// Authors of the prescriptions each AP received.
    pub prescriptions_received: Vec<Vec<usize>>,
    /// Senders of the reports each AP received.
    pub reports_received: Vec<Vec<usize>>,
}

#[derive(Clone, Debug)]
enum Fleet {
    Inspire(Vec<InspireAgent>),
    Default(DefaultAgent),
    Dsc(DscAgent),
    Thompson(Vec<ThompsonAgent>),
}

/// Drives one strategy on one topology, one synchronous round at a time.
#[derive(Clone, Debug)]
pub struct Orchestrator {
    oracle: ChannelOracle,
    neighborhoods: NeighborhoodMap,
    attainable: Vec<f64>,
    bounds: RewardBounds,
    fleet: Fleet,
    current: JointConfiguration,
    loss_prob: f64,
    loss_rng: ChaCha8Rng,
    iteration: usize,
    trace: RoundTrace,
}

impl Orchestrator {
    /// Neighborhoods come from default-configuration beacons.
    pub fn new(oracle: ChannelOracle, settings: &OrchestratorSettings) -> Self {
        let neighborhoods = compute_neighborhoods(&oracle, Configuration::DEFAULT);
        Self::with_neighborhoods(oracle, neighborhoods, settings)
    }

    pub fn with_neighborhoods(
        oracle: ChannelOracle,
        neighborhoods: NeighborhoodMap,
        settings: &OrchestratorSettings,
    ) -> Self {
        let n = oracle.topology().ap_count();
        assert_eq!(neighborhoods.len(), n, "one neighborhood per AP");
        let attainable = oracle.attainable_throughput();
        let bounds = RewardBounds::from_attainable(&attainable);
        let fleet = match settings.strategy {
            StrategyKind::Inspire => Fleet::Inspire(
                (0..n)
                    .map(|ap| {
                        InspireAgent::new(
                            ap,
                            neighborhoods.of(ap).to_vec(),
                            derive_seed(settings.seed, ap as u64),
                            &settings.inspire,
                        )
                    })
                    .collect(),
            ),
            StrategyKind::Default => Fleet::Default(DefaultAgent),
            StrategyKind::Dsc => Fleet::Dsc(DscAgent),
            StrategyKind::Thompson => Fleet::Thompson(
                (0..n)
                    .map(|ap| ThompsonAgent::new(derive_seed(settings.seed, ap as u64)))
                    .collect(),
            ),
        };
        Orchestrator {
            current: JointConfiguration::uniform(n, Configuration::DEFAULT),
            oracle,
            neighborhoods,
            attainable,
            bounds,
            fleet,
            loss_prob: settings.loss_prob.clamp(0.0, 1.0),
            loss_rng: ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, LOSS_STREAM)),
            iteration: 0,
            trace: RoundTrace::default(),
        }
    }

    pub fn oracle(&self) -> &ChannelOracle {
        &self.oracle
    }

    pub fn neighborhoods(&self) -> &NeighborhoodMap {
        &self.neighborhoods
    }

    pub fn attainable(&self) -> &[f64] {
        &self.attainable
    }

    pub fn bounds(&self) -> RewardBounds {
        self.bounds
    }

    pub fn current(&self) -> &JointConfiguration {
        &self.current
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// INSPIRE agents, empty for other strategies.
    pub fn inspire_agents(&self) -> &[InspireAgent] {
        match &self.fleet {
            Fleet::Inspire(agents) => agents,
            _ => &[],
        }
    }

    pub fn last_trace(&self) -> &RoundTrace {
        &self.trace
    }

    fn delivered(&mut self, from: usize, to: usize) -> bool {
        from == to || self.loss_prob == 0.0 || self.loss_rng.random::<f64>() >= self.loss_prob
    }

    pub fn run_round(&mut self) -> Result<RoundOutcome, ChannelError> {
        let n = self.oracle.topology().ap_count();
        let mut invalid_agents = 0;
        let joint = match &mut self.fleet {
            Fleet::Default(agent) => JointConfiguration::uniform(n, agent.step()),
            Fleet::Dsc(agent) => JointConfiguration(
                (0..n)
                    .map(|ap| agent.step(self.oracle.strongest_neighbor_rssi(ap, &self.current)))
                    .collect(),
            ),
            Fleet::Thompson(agents) => JointConfiguration(agents.iter_mut().map(ThompsonAgent::step).collect()),
            Fleet::Inspire(_) => self.inspire_prescribe_and_agree(),
        };

        let report = self.oracle.evaluate(&joint)?;
        let global = global_reward(&report);
        let normalized = self.bounds.normalize(global);

        match &mut self.fleet {
            Fleet::Thompson(agents) => agents.iter_mut().for_each(|a| a.observe(normalized)),
            Fleet::Inspire(_) => {
                let topology = self.oracle.topology();
                let outbox: Vec<RoundMessage> = (0..n)
                    .map(|ap| {
                        RoundMessage::report(
                            ap,
                            selfish_reward(&report, ap, topology),
                            self.neighborhoods.size(ap),
                            joint.get(ap),
                        )
                    })
                    .collect();
                let mut inboxes: Vec<Vec<RoundMessage>> = vec![Vec::new(); n];
                for msg in outbox {
                    for &to in self.neighborhoods.of(msg.sender).to_vec().iter() {
                        if self.delivered(msg.sender, to) {
                            inboxes[to].push(msg.clone());
                        }
                    }
                }
                self.trace.reports_received = inboxes.iter().map(|b| b.iter().map(|m| m.sender).collect()).collect();
                let Fleet::Inspire(agents) = &mut self.fleet else {
                    unreachable!()
                };
                for (agent, inbox) in agents.iter_mut().zip(&inboxes) {
                    if !agent.integrate(inbox) {
                        invalid_agents += 1;
                    }
                }
            }
            _ => {}
        }

        self.iteration += 1;
        self.current = joint.clone();
        Ok(RoundOutcome {
            iteration: self.iteration,
            joint,
            global_reward: global,
            normalized_reward: normalized,
            starving_count: starvation_count(&report, &self.attainable),
            cumulated_throughput: report.total(),
            invalid_agents,
        })
    }

    /// Phases 1 and 2: every agent prescribes to its neighborhood, every AP
    /// applies the weighted marginal median of what it received.
    fn inspire_prescribe_and_agree(&mut self) -> JointConfiguration {
        let Fleet::Inspire(agents) = &mut self.fleet else {
            unreachable!()
        };
        let prescriptions: Vec<Prescription> = agents.iter_mut().map(InspireAgent::prescribe).collect();
        let n = prescriptions.len();
        let mut inboxes: Vec<Vec<usize>> = vec![Vec::new(); n];
        for p in &prescriptions {
            for &(to, _) in &p.targets {
                if self.delivered(p.author, to) {
                    inboxes[to].push(p.author);
                }
            }
        }
        let joint = (0..n)
            .map(|ap| {
                let received: Vec<&Prescription> = inboxes[ap].iter().map(|&a| &prescriptions[a]).collect();
                // the AP's own prescription is always delivered, so this never fails
                aggregate_for(ap, &received, |_| 1.0).expect("own prescription present")
            })
            .collect();
        self.trace = RoundTrace {
            prescriptions,
            prescriptions_received: inboxes,
            reports_received: Vec::new(),
        };
        JointConfiguration(joint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::OracleParams;
    use crate::topology::{Building, Node, NodeKind, Topology};

    fn line(n: usize, spacing: f64) -> ChannelOracle {
        let aps = (0..n)
            .map(|k| Node {
                id: k as u32,
                kind: NodeKind::Ap,
                position: [k as f64 * spacing, 0.0, 2.5],
            })
            .collect();
        let stas = (0..n)
            .map(|k| Node {
                id: (n + k) as u32,
                kind: NodeKind::Sta,
                position: [k as f64 * spacing, 3.0, 1.0],
            })
            .collect();
        let t = Topology::new(aps, stas, (0..n).collect(), Building::open_plan(1)).unwrap();
        ChannelOracle::new(&t, OracleParams::default())
    }

    #[test]
    fn default_strategy_is_flat() {
        let mut o = Orchestrator::new(line(3, 15.0), &OrchestratorSettings::new(StrategyKind::Default, 0));
        let a = o.run_round().unwrap();
        let b = o.run_round().unwrap();
        assert_eq!(a.global_reward, b.global_reward);
        assert_eq!(b.iteration, 2);
        assert_eq!(a.joint, JointConfiguration::uniform(3, Configuration::DEFAULT));
    }

    #[test]
    fn every_ap_applies_one_config() {
        for strategy in StrategyKind::ALL {
            let mut o = Orchestrator::new(line(4, 12.0), &OrchestratorSettings::new(strategy, 2));
            for _ in 0..3 {
                let r = o.run_round().unwrap();
                assert_eq!(r.joint.len(), 4);
                assert!(r.joint.0.iter().all(Configuration::is_valid));
                assert!((0.0..=1.0).contains(&r.normalized_reward));
            }
        }
    }

    #[test]
    fn gp_dimension_follows_neighborhood() {
        let o = Orchestrator::new(line(4, 12.0), &OrchestratorSettings::new(StrategyKind::Inspire, 2));
        for agent in o.inspire_agents() {
            assert_eq!(agent.gp().dim(), 2 * o.neighborhoods().size(agent.ap()));
        }
    }

    #[test]
    fn total_loss_invalidates_multi_ap_neighborhoods() {
        let mut settings = OrchestratorSettings::new(StrategyKind::Inspire, 2);
        settings.loss_prob = 1.0;
        let mut o = Orchestrator::new(line(2, 10.0), &settings);
        assert_eq!(o.neighborhoods().size(0), 2);
        let r = o.run_round().unwrap();
        assert_eq!(r.invalid_agents, 2);
        assert!(o.inspire_agents().iter().all(|a| a.gp().is_empty()));
        // with every message lost each AP only hears itself
        assert_eq!(o.last_trace().prescriptions_received, vec![vec![0], vec![1]]);
    }
}
