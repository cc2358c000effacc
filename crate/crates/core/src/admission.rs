//! Fixed-window admission keyed by `agent:{keyId}:{ip}`.

use std::collections::HashMap;
use std::net::IpAddr;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;

pub const DEFAULT_WINDOW_SECONDS: u64 = 60;
pub const DEFAULT_LIMIT: u32 = 240;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admitted { remaining: u32 },
    Denied { retry_after_secs: u64 },
}

impl Admission {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateBucket {
    pub bucket_key: String,
    pub window_start: DateTime<Utc>,
    pub count: u32,
}

/// Windows start at the first request seen for a bucket, not on wall-clock
/// minute boundaries.
#[derive(Debug)]
pub struct AdmissionController {
    window: Duration,
    limit: u32,
    buckets: Mutex<HashMap<String, RateBucket>>,
}

pub fn bucket_key(key_id: &str, ip: IpAddr) -> String {
    format!("agent:{key_id}:{ip}")
}

impl Default for AdmissionController {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_SECONDS, DEFAULT_LIMIT)
    }
}

impl AdmissionController {
    pub fn new(window_seconds: u64, limit: u32) -> Self {
        assert!(window_seconds > 0, "window must be positive");
        AdmissionController {
            window: Duration::seconds(window_seconds as i64),
            limit,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    pub fn window_seconds(&self) -> u64 {
        self.window.num_seconds() as u64
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    /// Atomic check-and-increment. A denial leaves the bucket unchanged.
    pub fn admit(&self, key_id: &str, ip: IpAddr, now: DateTime<Utc>) -> Admission {
        let key = bucket_key(key_id, ip);
        let mut buckets = self.buckets.lock();
        let bucket = buckets
            .entry(key.clone())
            .or_insert_with(|| RateBucket { bucket_key: key, window_start: now, count: 0 });
        if now - bucket.window_start >= self.window || now < bucket.window_start {
            bucket.window_start = now;
            bucket.count = 0;
        }
        if bucket.count < self.limit {
            bucket.count += 1;
            Admission::Admitted { remaining: self.limit - bucket.count }
        } else {
            let left = bucket.window_start + self.window - now;
            let millis = left.num_milliseconds().max(0) as u64;
            Admission::Denied { retry_after_secs: millis.div_ceil(1000).max(1) }
        }
    }

    pub fn bucket(&self, key_id: &str, ip: IpAddr) -> Option<RateBucket> {
        self.buckets.lock().get(&bucket_key(key_id, ip)).cloned()
    }

    /// Drops buckets whose window has closed.
    pub fn prune(&self, now: DateTime<Utc>) {
        self.buckets.lock().retain(|_, b| now - b.window_start < self.window);
    }

    pub fn reset(&self) {
        self.buckets.lock().clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use std::sync::Arc;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap()
    }

    fn ip(s: &str) -> IpAddr {
        s.parse().unwrap()
    }

    #[test]
    fn bucket_key_shape() {
        assert_eq!(bucket_key("key_1", ip("10.0.0.1")), "agent:key_1:10.0.0.1");
    }

    #[test]
    fn limit_then_deny_then_reset() {
        let ac = AdmissionController::default();
        let a = ip("10.0.0.1");
        for i in 0..240u32 {
            let at = t0() + Duration::milliseconds((i as i64) * 59_000 / 240);
            assert!(ac.admit("k", a, at).is_admitted(), "request {}", i + 1);
        }
        let denied = ac.admit("k", a, t0() + Duration::seconds(59));
        assert_eq!(denied, Admission::Denied { retry_after_secs: 1 });
        assert_eq!(ac.bucket("k", a).unwrap().count, 240);
        assert!(ac.admit("k", a, t0() + Duration::seconds(61)).is_admitted());
        assert_eq!(ac.bucket("k", a).unwrap().count, 1);
    }

    #[test]
    fn retry_after_counts_to_window_end() {
        let ac = AdmissionController::new(60, 1);
        assert!(ac.admit("k", ip("10.0.0.1"), t0()).is_admitted());
        assert_eq!(
            ac.admit("k", ip("10.0.0.1"), t0() + Duration::milliseconds(15_500)),
            Admission::Denied { retry_after_secs: 45 }
        );
    }

    #[test]
    fn window_aligned_to_first_request() {
        let ac = AdmissionController::new(60, 2);
        let start = t0() + Duration::seconds(37);
        ac.admit("k", ip("10.0.0.1"), start);
        ac.admit("k", ip("10.0.0.1"), start + Duration::seconds(30));
        assert!(!ac.admit("k", ip("10.0.0.1"), t0() + Duration::seconds(60 + 30)).is_admitted());
        assert!(ac.admit("k", ip("10.0.0.1"), start + Duration::seconds(60)).is_admitted());
    }

    #[test]
    fn budgets_are_per_key_and_ip() {
        let ac = AdmissionController::new(60, 1);
        assert!(ac.admit("k", ip("10.0.0.1"), t0()).is_admitted());
        assert!(ac.admit("k", ip("10.0.0.2"), t0()).is_admitted());
        assert!(ac.admit("k2", ip("10.0.0.1"), t0()).is_admitted());
        assert!(!ac.admit("k", ip("10.0.0.1"), t0()).is_admitted());
    }

    #[test]
    fn concurrent_admission_is_exact() {
        let ac = Arc::new(AdmissionController::default());
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let ac = ac.clone();
                std::thread::spawn(move || (0..50).filter(|_| ac.admit("k", ip("10.0.0.1"), t0()).is_admitted()).count())
            })
            .collect();
        let admitted: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(admitted, 240);
    }

    #[test]
    fn prune_drops_closed_windows() {
        let ac = AdmissionController::default();
        ac.admit("k", ip("10.0.0.1"), t0());
        ac.prune(t0() + Duration::seconds(60));
        assert!(ac.bucket("k", ip("10.0.0.1")).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Oracle: replay the same arrival sequence through a plain counter model.
            #[test]
            fn matches_reference_model(offsets in proptest::collection::vec(0i64..200_000, 1..400), limit in 1u32..20) {
                let mut offsets = offsets;
                offsets.sort_unstable();
                let ac = AdmissionController::new(60, limit);
                let mut start: Option<i64> = None;
                let mut count = 0u32;
                for off in offsets {
                    if start.is_none_or(|s| off - s >= 60_000) {
                        start = Some(off);
                        count = 0;
                    }
                    let expected = count < limit;
                    if expected {
                        count += 1;
                    }
                    let got = ac.admit("k", ip("10.0.0.1"), t0() + Duration::milliseconds(off)).is_admitted();
                    prop_assert_eq!(got, expected);
                }
            }
        }
    }
}
