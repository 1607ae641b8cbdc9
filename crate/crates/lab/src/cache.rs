//! Shared memo of dynamic-NTK schedules keyed by sequence length.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use resonance_core::scaling::compose_for_length;
use resonance_core::{Result, ScalingSpec, ThetaSchedule};

/// Thread-safe cache of `compose_for_length(spec, .., len)`. Readers never
/// block each other; concurrent inserts for the same length both succeed
/// and the last one stays (the values are identical).
#[derive(Debug)]
pub struct ScheduleCache {
    spec: ScalingSpec,
    head_dim: usize,
    rotary_base: f64,
    entries: RwLock<HashMap<usize, Arc<ThetaSchedule>>>,
}

impl ScheduleCache {
    pub fn new(spec: ScalingSpec, head_dim: usize, rotary_base: f64) -> Result<Self> {
        spec.validate()?;
        // surface bad dimensions now rather than on first lookup
        ThetaSchedule::new(head_dim, rotary_base)?;
        Ok(Self { spec, head_dim, rotary_base, entries: RwLock::new(HashMap::new()) })
    }

    pub fn get(&self, length: usize) -> Result<Arc<ThetaSchedule>> {
        if let Some(hit) = self.entries.read().unwrap().get(&length) {
            return Ok(Arc::clone(hit));
        }
        let built = Arc::new(compose_for_length(&self.spec, self.head_dim, self.rotary_base, length)?);
        self.entries.write().unwrap().insert(length, Arc::clone(&built));
        Ok(built)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use resonance_core::ScalingMethod;

    #[test]
    fn concurrent_lookups_agree() {
        let spec = ScalingSpec::new(ScalingMethod::DynamicNtk, 1.0, 64);
        let cache = ScheduleCache::new(spec.clone(), 64, 10000.0).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let (cache, spec) = (&cache, &spec);
                s.spawn(move || {
                    for len in (64..512).step_by(32 + t) {
                        let got = cache.get(len).unwrap();
                        let direct = compose_for_length(spec, 64, 10000.0, len).unwrap();
                        assert_eq!(got.thetas(), direct.thetas());
                    }
                });
            }
        });
        assert!(!cache.is_empty());
        let a = cache.get(128).unwrap();
        assert!(Arc::ptr_eq(&a, &cache.get(128).unwrap()));
        // at or below the training length the scale is 1
        assert_eq!(cache.get(32).unwrap().thetas(), ThetaSchedule::new(64, 10000.0).unwrap().thetas());
    }
}
