//! Non-reasoning proposers: random, low-discrepancy and scripted.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParameterUpdate, ProposalContext, Proposer, ProposerError, ProposerKind, SearchSpace};
use crate::proposer::ChatExchange;
use crate::seed;

/// Point `index` of a scrambled Sobol sequence in `dim` dimensions.
pub fn sobol_point(index: usize, dim: usize, seed: u64) -> Vec<f64> {
    let s = (seed ^ (seed >> 32)) as u32;
    (0..dim).map(|d| sobol_burley::sample(index as u32, d as u32, s) as f64).collect()
}

pub struct RandomProposer {
    space: SearchSpace,
    seed: u64,
    log_scale: bool,
}

impl RandomProposer {
    pub fn new(space: SearchSpace, seed: u64, log_scale: bool) -> Self {
        Self { space, seed, log_scale }
    }

    pub fn point(&self, round: usize) -> BTreeMap<String, f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &format!("random/{round}")));
        let u: Vec<f64> = (0..self.space.dim()).map(|_| rng.gen::<f64>()).collect();
        self.space.from_unit(&u, self.log_scale)
    }
}

impl Proposer for RandomProposer {
    fn kind(&self) -> ProposerKind {
        ProposerKind::Random
    }

    fn propose(&mut self, ctx: &ProposalContext, _log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        Ok(ParameterUpdate::absolute(&self.point(ctx.round)))
    }
}

pub struct SobolProposer {
    space: SearchSpace,
    seed: u64,
    log_scale: bool,
}

impl SobolProposer {
    pub fn new(space: SearchSpace, seed: u64, log_scale: bool) -> Self {
        Self { space, seed, log_scale }
    }

    pub fn point(&self, round: usize) -> BTreeMap<String, f64> {
        let u = sobol_point(round.saturating_sub(1), self.space.dim(), self.seed);
        self.space.from_unit(&u, self.log_scale)
    }
}

impl Proposer for SobolProposer {
    fn kind(&self) -> ProposerKind {
        ProposerKind::Sobol
    }

    fn propose(&mut self, ctx: &ProposalContext, _log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        Ok(ParameterUpdate::absolute(&self.point(ctx.round)))
    }
}

/// Replays a fixed list of updates; round `t` returns entry `t` (1-based).
pub struct ScriptedProposer {
    script: Vec<ParameterUpdate>,
}

impl ScriptedProposer {
    pub fn new(script: Vec<ParameterUpdate>) -> Self {
        Self { script }
    }

    /// Reads one update per nonblank line.
    pub fn load(path: &Path) -> Result<Self, ProposerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProposerError::Config(format!("{}: {e}", path.display())))?;
        let mut script = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let u: ParameterUpdate = serde_json::from_str(line)
                .map_err(|e| ProposerError::Config(format!("{} line {}: {e}", path.display(), i + 1)))?;
            script.push(u);
        }
        Ok(Self { script })
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    pub fn get(&self, round: usize) -> Result<ParameterUpdate, ProposerError> {
        round
            .checked_sub(1)
            .and_then(|i| self.script.get(i))
            .cloned()
            .ok_or(ProposerError::Exhausted { round, len: self.script.len() })
    }
}

impl Proposer for ScriptedProposer {
    fn kind(&self) -> ProposerKind {
        ProposerKind::Scripted
    }

    fn propose(&mut self, ctx: &ProposalContext, _log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        self.get(ctx.round)
    }
}

/// `steps` absolute updates walking from `from` to `to`, geometrically when
/// both ends are positive and linearly otherwise. The last one is `to` exactly.
pub fn interpolation_script(from: &BTreeMap<String, f64>, to: &BTreeMap<String, f64>, steps: usize) -> Vec<ParameterUpdate> {
    (1..=steps)
        .map(|k| {
            let f = k as f64 / steps as f64;
            let point: BTreeMap<String, f64> = to
                .iter()
                .map(|(key, &b)| {
                    let a = from.get(key).copied().unwrap_or(b);
                    let v = if k == steps {
                        b
                    } else if a > 0.0 && b > 0.0 {
                        (a.ln() + f * (b / a).ln()).exp()
                    } else {
                        a + f * (b - a)
                    };
                    (key.clone(), v)
                })
                .collect();
            ParameterUpdate::absolute(&point)
        })
        .collect()
}

/// Placeholder for an evolution-strategy baseline; every call fails.
pub struct CmaesStub;

impl Proposer for CmaesStub {
    fn kind(&self) -> ProposerKind {
        ProposerKind::CmaesStub
    }

    fn propose(&mut self, _ctx: &ProposalContext, _log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        Err(ProposerError::Unsupported("the CMA-ES proposer is a stub".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::proposer::Directive;
    use proptest::prelude::*;

    fn space() -> SearchSpace {
        SearchSpace::new(vec!["a".into(), "b".into()], vec![1e-14, 0.1], vec![1e-9, 0.6]).unwrap()
    }

    #[test]
    fn random_and_sobol_are_deterministic() {
        let r = RandomProposer::new(space(), 4, false);
        assert_eq!(r.point(3), RandomProposer::new(space(), 4, false).point(3));
        assert_ne!(r.point(3), r.point(4));
        let s = SobolProposer::new(space(), 4, true);
        assert_eq!(s.point(1), SobolProposer::new(space(), 4, true).point(1));
        assert_ne!(s.point(1), s.point(2));
    }

    #[test]
    fn collapsed_bounds_give_that_point() {
        let sp = SearchSpace::new(vec!["a".into()], vec![0.3], vec![0.3]).unwrap();
        assert_eq!(RandomProposer::new(sp.clone(), 0, false).point(1)["a"], 0.3);
        assert_eq!(SobolProposer::new(sp, 0, true).point(7)["a"], 0.3);
    }

    #[test]
    fn random_draws_stay_in_bounds() {
        let sp = space();
        for log in [false, true] {
            let r = RandomProposer::new(sp.clone(), 9, log);
            let s = SobolProposer::new(sp.clone(), 9, log);
            for t in 1..=10_000 {
                assert!(sp.contains(&r.point(t)));
                assert!(sp.contains(&s.point(t)));
            }
        }
    }

    #[test]
    fn scripted_rounds() {
        let u = |v: f64| ParameterUpdate::absolute(&BTreeMap::from([("a".to_string(), v)]));
        let p = ScriptedProposer::new(vec![u(1.0), u(2.0)]);
        assert_eq!(p.get(1).unwrap(), u(1.0));
        assert!(matches!(p.get(3), Err(ProposerError::Exhausted { round: 3, len: 2 })));
        assert!(p.get(0).is_err());
    }

    #[test]
    fn interpolation_ends_on_target() {
        let from = BTreeMap::from([("a".to_string(), 1e-12), ("b".to_string(), -1.0)]);
        let to = BTreeMap::from([("a".to_string(), 3.3e-14), ("b".to_string(), 2.0)]);
        let s = interpolation_script(&from, &to, 4);
        assert_eq!(s.len(), 4);
        assert_eq!(s[3].params["a"], Directive::Absolute(3.3e-14));
        assert_eq!(s[3].params["b"], Directive::Absolute(2.0));
        assert_eq!(s[1].params["b"], Directive::Absolute(0.5));
        let Directive::Absolute(mid) = s[1].params["a"] else { panic!() };
        assert!((mid / (1e-12f64 * 3.3e-14).sqrt() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sobol_coordinates_in_unit_cube(i in 0usize..60000, d in 1usize..8, seed in any::<u64>()) {
            for x in sobol_point(i, d, seed) {
                prop_assert!((0.0..1.0).contains(&x));
            }
        }
    }
}
