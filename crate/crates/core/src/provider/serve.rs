use std::io::{BufRead, Write};

use super::protocol::{self, Reply, Request};
use super::{ProviderError, ProviderInit, SalienceProvider};
use crate::image::RgbImage;

/// Builds providers (and optionally answers oracle queries) for [`serve`].
pub trait ProviderFactory {
    fn create(&mut self, init: &ProviderInit) -> Result<Box<dyn SalienceProvider>, ProviderError>;

    /// Square input side for oracle queries; `Err` when this process is not
    /// an oracle.
    fn oracle_input_size(&mut self) -> Result<Option<u32>, ProviderError> {
        Err(ProviderError::Protocol(
            "this process does not serve oracle queries".into(),
        ))
    }

    fn score(&mut self, _image: &RgbImage, _classes: &[String]) -> Result<Vec<f64>, ProviderError> {
        Err(ProviderError::Protocol(
            "this process does not serve oracle queries".into(),
        ))
    }
}

/// Run the provider side of the line protocol until `shutdown` or EOF.
///
/// Request-level failures are answered with an `error` message and the loop
/// continues; only I/O failures on the streams end it early.
pub fn serve<R: BufRead, W: Write>(input: R, mut output: W, factory: &mut dyn ProviderFactory) -> std::io::Result<()> {
    let mut session: Option<Box<dyn SalienceProvider>> = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let request: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                reply(
                    &mut output,
                    &Reply::Error {
                        message: format!("malformed request: {e}"),
                    },
                )?;
                continue;
            }
        };
        let answer = match request {
            Request::Shutdown => return Ok(()),
            Request::Init(init) => init.validate().and_then(|_| factory.create(&init)).map(|provider| {
                let ready = Reply::Ready {
                    k: provider.n_classes(),
                    grid: provider.grid(),
                    spans: None,
                };
                session = Some(provider);
                ready
            }),
            Request::Salience { active_b64 } => match session.as_mut() {
                None => Err(ProviderError::Protocol("salience before init".into())),
                Some(provider) => protocol::decode_active(&active_b64)
                    .and_then(|active| provider.query(&active))
                    .map(|r| protocol::encode_response(&r)),
            },
            Request::OracleInit => factory
                .oracle_input_size()
                .map(|input_size| Reply::OracleReady { input_size }),
            Request::Score { image_b64, classes } => protocol::decode_image(&image_b64)
                .and_then(|image| factory.score(&image, &classes))
                .map(|scores| Reply::Scores { scores }),
        };
        let answer = answer.unwrap_or_else(|e| Reply::Error { message: e.to_string() });
        reply(&mut output, &answer)?;
    }
    Ok(())
}

fn reply<W: Write>(output: &mut W, message: &Reply) -> std::io::Result<()> {
    writeln!(output, "{}", message.to_line())?;
    output.flush()
}
