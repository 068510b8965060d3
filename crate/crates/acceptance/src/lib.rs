//! Minimal reporter for the acceptance run: one line per criterion.

use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Record {
    pub id: String,
    pub title: String,
    pub pass: bool,
    pub elapsed: Duration,
    pub budget: Duration,
    pub detail: String,
}

impl Record {
    pub fn line(&self) -> String {
        format!(
            "[{}] {} {}: {} ({:.1} s, budget {} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
    }
}

/// Runs criteria selected by the filters and collects their records.
#[derive(Debug, Default)]
pub struct Runner {
    filters: Vec<String>,
    pub records: Vec<Record>,
}

impl Runner {
    /// Positional arguments select criteria by id (`c4`, `C10`); flags are
    /// ignored so that test-runner options pass through harmlessly.
    pub fn from_args(args: impl IntoIterator<Item = String>) -> Self {
        let filters = args.into_iter().filter(|a| !a.starts_with('-')).map(|a| a.to_ascii_uppercase()).collect();
        Self { filters, records: Vec::new() }
    }

    pub fn selected(&self, id: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| f == id)
    }

    /// Runs one criterion. The runtime budget is part of the verdict.
    pub fn run(&mut self, id: &str, title: &str, budget: Duration, check: impl FnOnce() -> Outcome) {
        if !self.selected(id) {
            return;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let within = elapsed <= budget;
        let mut detail = outcome.detail;
        if !within {
            detail.push_str("; runtime budget exceeded");
        }
        let record = Record {
            id: id.to_string(),
            title: title.to_string(),
            pass: outcome.pass && within,
            elapsed,
            budget,
            detail,
        };
        println!("{}", record.line());
        self.records.push(record);
    }

    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn summary(&self) -> String {
        let passed = self.records.iter().filter(|r| r.pass).count();
        format!("acceptance: {passed}/{} criteria passed", self.records.len())
    }
}
