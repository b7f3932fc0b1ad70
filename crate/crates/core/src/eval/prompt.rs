use crate::error::{GlamError, Result};
use crate::rng::rng_from_seed;

pub const DEMO_SEPARATOR: &str = "\n\n";

/// `shots` demonstrations drawn without replacement by `seed`, each followed
/// by a blank line, then the evaluation context.
pub fn build_prompt(demonstrations: &[String], context: &str, shots: usize, seed: u64) -> Result<String> {
    if shots > demonstrations.len() {
        return Err(GlamError::Eval(format!(
            "{shots} shots requested but only {} demonstrations available",
            demonstrations.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    let picked = rand::seq::index::sample(&mut rng, demonstrations.len(), shots);
    let mut prompt = String::new();
    for i in picked {
        prompt.push_str(&demonstrations[i]);
        prompt.push_str(DEMO_SEPARATOR);
    }
    prompt.push_str(context);
    Ok(prompt)
}
