use crate::validate::{ValidationReport, ViolationCode};

use super::{GenerationJob, JobStatus, PipelineError, ProviderError};

pub const DEFAULT_MAX_RETRIES: u32 = 2;

/// Calls `call` until `validate` accepts its output, at most
/// `max_retries + 1` times.
///
/// Every attempt after the first receives the previous report so it can be
/// forwarded to the provider as repair context. Output that does not match
/// the requested schema counts as a failed attempt. Transport and
/// configuration errors end the job immediately.
pub fn run_with_validation<T>(
    job: &mut GenerationJob,
    max_retries: u32,
    mut call: impl FnMut(Option<&ValidationReport>) -> Result<T, ProviderError>,
    validate: impl Fn(&T) -> ValidationReport,
) -> Result<T, PipelineError> {
    job.status = JobStatus::Running;
    job.attempts = 0;
    job.last_report = None;
    job.error = None;

    let mut previous: Option<ValidationReport> = None;
    while job.attempts <= max_retries {
        job.attempts += 1;
        let report = match call(previous.as_ref()) {
            Ok(output) => {
                let report = validate(&output);
                if report.ok {
                    job.last_report = Some(report);
                    job.status = JobStatus::Succeeded;
                    return Ok(output);
                }
                report
            }
            Err(ProviderError::InvalidOutput { expected, detail }) => {
                let mut r = ValidationReport::new();
                r.push(
                    ViolationCode::InvariantViolation,
                    None,
                    format!("output does not match the {expected:?} schema: {detail}"),
                );
                r
            }
            Err(e) => {
                job.status = JobStatus::Failed;
                job.error = Some(e.to_string());
                return Err(PipelineError::Provider(e));
            }
        };
        tracing::debug!(stage = %job.stage, attempt = job.attempts, "{}", report.summary());
        job.last_report = Some(report.clone());
        previous = Some(report);
    }

    let report = previous.unwrap_or_default();
    job.status = JobStatus::Failed;
    job.error = Some(report.summary());
    Err(PipelineError::GenerationFailed { stage: job.stage, attempts: job.attempts, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Stage;

    fn failing() -> ValidationReport {
        let mut r = ValidationReport::new();
        r.push(ViolationCode::PageCountMismatch, None, "13 pages");
        r
    }

    #[test]
    fn repair_context_is_passed_forward() {
        let mut job = GenerationJob::scratch(Stage::Episode);
        let mut seen = Vec::new();
        let out = run_with_validation(
            &mut job,
            2,
            |prev| {
                seen.push(prev.cloned());
                Ok(seen.len())
            },
            |n| if *n < 2 { failing() } else { ValidationReport::new() },
        )
        .unwrap();
        assert_eq!(out, 2);
        assert_eq!(job.attempts, 2);
        assert_eq!(seen, vec![None, Some(failing())]);
        assert_eq!(job.status, JobStatus::Succeeded);
        job.check(2).unwrap();
    }

    #[test]
    fn zero_retries_means_one_attempt() {
        let mut job = GenerationJob::scratch(Stage::Episode);
        let err = run_with_validation(&mut job, 0, |_| Ok(()), |_| failing()).unwrap_err();
        assert!(matches!(err, PipelineError::GenerationFailed { attempts: 1, .. }));
        assert_eq!(job.status, JobStatus::Failed);
    }

    #[test]
    fn transport_errors_are_not_retried() {
        let mut job = GenerationJob::scratch(Stage::Feedback);
        let mut calls = 0;
        let err = run_with_validation(
            &mut job,
            2,
            |_| -> Result<(), _> {
                calls += 1;
                Err(ProviderError::Transport("down".into()))
            },
            |_| ValidationReport::new(),
        )
        .unwrap_err();
        assert_eq!(calls, 1);
        assert!(matches!(err, PipelineError::Provider(_)));
    }

    #[test]
    fn schema_mismatch_is_retried() {
        let mut job = GenerationJob::scratch(Stage::Feedback);
        let mut calls = 0;
        let out = run_with_validation(
            &mut job,
            2,
            |_| {
                calls += 1;
                if calls == 1 {
                    Err(ProviderError::InvalidOutput {
                        expected: crate::domain::TypeTag::FeedbackDraft,
                        detail: "missing text_cn".into(),
                    })
                } else {
                    Ok(calls)
                }
            },
            |_| ValidationReport::new(),
        )
        .unwrap();
        assert_eq!(out, 2);
    }
}
