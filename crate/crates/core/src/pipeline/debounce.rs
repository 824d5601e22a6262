use std::collections::VecDeque;

use crate::templates::GestureLabel;

/// Majority filter over the last `window` predictions.
///
/// The output starts at rest. Once the window is full, the output switches
/// when more than half of the window disagrees with it; the new output is
/// the most frequent disagreeing label, ties going to the most recently
/// seen one. A switch clears the window, so two switches are always at
/// least `window` predictions apart.
#[derive(Debug, Clone)]
pub struct Debouncer {
    window: usize,
    history: VecDeque<GestureLabel>,
    current: GestureLabel,
    changes: u64,
}

impl Debouncer {
    /// # Panics
    /// If `window` is zero.
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "debounce window must be at least 1");
        Self {
            window,
            history: VecDeque::with_capacity(window),
            current: GestureLabel::Rest,
            changes: 0,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn current(&self) -> GestureLabel {
        self.current
    }

    pub fn changes(&self) -> u64 {
        self.changes
    }

    /// Feeds one prediction; returns the new output if it changed.
    pub fn push(&mut self, prediction: GestureLabel) -> Option<GestureLabel> {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(prediction);
        if self.history.len() < self.window {
            return None;
        }

        let mut counts = [0usize; 4];
        let mut last_seen = [0usize; 4];
        for (i, l) in self.history.iter().enumerate() {
            counts[l.ordinal()] += 1;
            last_seen[l.ordinal()] = i;
        }
        let disagreeing = self.window - counts[self.current.ordinal()];
        if 2 * disagreeing <= self.window {
            return None;
        }
        let next = GestureLabel::ALL
            .into_iter()
            .filter(|&l| l != self.current && counts[l.ordinal()] > 0)
            .max_by_key(|l| (counts[l.ordinal()], last_seen[l.ordinal()]))?;
        self.current = next;
        self.changes += 1;
        self.history.clear();
        Some(next)
    }
}
