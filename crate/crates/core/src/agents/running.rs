/// Running mean and variance (parallel-merge form).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            count: 1e-4,
        }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, x: f64) {
        let total = self.count + 1.0;
        let delta = x - self.mean;
        let mean = self.mean + delta / total;
        let m2 = self.var * self.count + delta * delta * self.count / total;
        self.mean = mean;
        self.var = m2 / total;
        self.count = total;
    }
}

/// Scales rewards by the running std of the discounted return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardNormalizer {
    pub gamma: f64,
    pub clip: f64,
    pub stats: RunningMeanStd,
    ret: f64,
}

impl RewardNormalizer {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            clip: 10.0,
            stats: RunningMeanStd::default(),
            ret: 0.0,
        }
    }

    pub fn normalize(&mut self, reward: f64, done: bool) -> f64 {
        self.ret = self.ret * self.gamma + reward;
        self.stats.update(self.ret);
        let out = (reward / (self.stats.var + 1e-8).sqrt()).clamp(-self.clip, self.clip);
        if done {
            self.ret = 0.0;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_match_direct() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.0];
        let mut r = RunningMeanStd {
            mean: 0.0,
            var: 0.0,
            count: 0.0,
        };
        xs.iter().for_each(|&x| r.update(x));
        let m = xs.iter().sum::<f64>() / 5.0;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
        assert!((r.mean - m).abs() < 1e-12 && (r.var - v).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_scale_by_return_std() {
        let mut n = RewardNormalizer::new(0.0);
        for _ in 0..1000 {
            n.normalize(2.0, false);
        }
        // With gamma 0 every return is 2, so the variance decays towards 0 and the clip applies.
        assert_eq!(n.normalize(2.0, false), 10.0);
    }
}
