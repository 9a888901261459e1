/// Learning rate as a function of the optimizer step.
pub trait LrSchedule {
    fn lr(&self, step: usize) -> f64;
}

/// Linear warm-up from zero to `peak`, then half-cosine decay to `floor`.
#[derive(Debug, Clone, Copy)]
pub struct CosineWarmup {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub floor: f64,
}

impl LrSchedule for CosineWarmup {
    fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / decay as f64).min(1.0);
        self.floor + (self.peak - self.floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
