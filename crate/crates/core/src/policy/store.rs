use std::sync::Arc;

use super::{parse_policy_document, PolicyError, PolicySet};

/// Parse `new_document` as the successor of `set`.
///
/// The document's own `version` field is ignored; the result is always
/// `set.version() + 1`.
pub fn apply_update(set: &PolicySet, new_document: &str) -> Result<PolicySet, PolicyError> {
    parse_policy_document(new_document)?.with_version(set.version() + 1)
}

/// Version history with one active snapshot. Every version ever activated
/// stays readable.
#[derive(Debug, Clone)]
pub struct PolicyStore {
    versions: Vec<Arc<PolicySet>>,
}

impl PolicyStore {
    pub fn new(initial: PolicySet) -> Self {
        PolicyStore { versions: vec![Arc::new(initial)] }
    }

    pub fn active(&self) -> Arc<PolicySet> {
        Arc::clone(self.versions.last().expect("store is never empty"))
    }

    pub fn version(&self) -> u64 {
        self.active().version()
    }

    pub fn get(&self, version: u64) -> Option<Arc<PolicySet>> {
        self.versions.iter().find(|s| s.version() == version).cloned()
    }

    pub fn history(&self) -> impl Iterator<Item = &Arc<PolicySet>> {
        self.versions.iter()
    }

    pub fn apply_update(&mut self, new_document: &str) -> Result<Arc<PolicySet>, PolicyError> {
        let next = apply_update(&self.active(), new_document)?;
        Ok(self.push(next))
    }

    /// Activate a set built elsewhere, renumbered as the next version.
    pub fn install(&mut self, set: PolicySet) -> Result<Arc<PolicySet>, PolicyError> {
        let next = set.with_version(self.version() + 1)?;
        Ok(self.push(next))
    }

    /// Restore a recorded version verbatim (log replay). Versions must arrive
    /// in increasing order.
    pub fn restore(&mut self, set: PolicySet) -> Result<(), PolicyError> {
        if set.version() <= self.version() {
            return Err(PolicyError::InvalidRule {
                rule_id: String::new(),
                reason: format!("version {} does not follow {}", set.version(), self.version()),
                line: None,
            });
        }
        self.push(set);
        Ok(())
    }

    fn push(&mut self, set: PolicySet) -> Arc<PolicySet> {
        let set = Arc::new(set);
        self.versions.push(Arc::clone(&set));
        set
    }
}
