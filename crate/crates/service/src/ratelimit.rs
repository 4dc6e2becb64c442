//! Per-address token bucket.

use std::collections::HashMap;
use std::net::IpAddr;
use std::sync::Mutex;
use std::time::Instant;

#[derive(Debug, Clone, Copy)]
struct Bucket {
    tokens: f64,
    refilled: Instant,
}

/// Allows `per_minute` requests per address in a burst, refilled
/// continuously at the same rate. Requests without an address share one
/// bucket.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_second: f64,
    buckets: Mutex<HashMap<Option<IpAddr>, Bucket>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        let capacity = f64::from(per_minute.max(1));
        RateLimiter { capacity, per_second: capacity / 60.0, buckets: Mutex::new(HashMap::new()) }
    }

    pub fn check(&self, addr: Option<IpAddr>) -> bool {
        self.check_at(addr, Instant::now())
    }

    pub fn check_at(&self, addr: Option<IpAddr>, now: Instant) -> bool {
        let mut buckets = self.buckets.lock().expect("rate limiter lock");
        if buckets.len() > 100_000 {
            let capacity = self.capacity;
            let per_second = self.per_second;
            buckets.retain(|_, b| b.tokens + now.saturating_duration_since(b.refilled).as_secs_f64() * per_second < capacity);
        }
        let bucket = buckets.entry(addr).or_insert(Bucket { tokens: self.capacity, refilled: now });
        let gained = now.saturating_duration_since(bucket.refilled).as_secs_f64() * self.per_second;
        bucket.tokens = (bucket.tokens + gained).min(self.capacity);
        bucket.refilled = now;
        if bucket.tokens >= 1.0 {
            bucket.tokens -= 1.0;
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn burst_then_refill() {
        let limiter = RateLimiter::new(60);
        let t0 = Instant::now();
        let ip: Option<IpAddr> = Some("198.51.100.1".parse().unwrap());
        assert!((0..60).all(|_| limiter.check_at(ip, t0)));
        assert!(!limiter.check_at(ip, t0));
        assert!(limiter.check_at(Some("198.51.100.2".parse().unwrap()), t0));
        assert!(limiter.check_at(ip, t0 + Duration::from_millis(1001)));
        assert!(!limiter.check_at(ip, t0 + Duration::from_millis(1002)));
    }
}
