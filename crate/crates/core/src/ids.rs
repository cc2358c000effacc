use uuid::Uuid;

/// Server-issued opaque identifier with a type prefix, e.g. `drf_3f1c...`.
pub fn new_id(prefix: &str) -> String {
    format!("{prefix}_{}", Uuid::new_v4().simple())
}
