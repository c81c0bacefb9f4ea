use std::sync::Mutex;

/// Single-slot override buffer between the service (writer) and the actor
/// loop (reader). Last write wins; a read consumes the slot.
///
/// A takeover is a stream of per-step `post`s; `end` drops anything still
/// pending so a stale action is not replayed after the operator lets go.
#[derive(Debug, Default)]
pub struct OverrideMailbox {
    slot: Mutex<Option<[f64; 2]>>,
}

impl OverrideMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn post(&self, action: [f64; 2]) {
        let a = super::clamp_action(action);
        *self.lock() = Some(a);
    }

    pub fn end(&self) {
        *self.lock() = None;
    }

    pub fn take(&self) -> Option<[f64; 2]> {
        self.lock().take()
    }

    pub fn peek(&self) -> Option<[f64; 2]> {
        *self.lock()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Option<[f64; 2]>> {
        // a panicking writer cannot leave the slot half-written
        self.slot.lock().unwrap_or_else(|e| e.into_inner())
    }
}
