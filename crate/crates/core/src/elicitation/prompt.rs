use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    Blind,
    DiseaseInformed,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 2] = [PromptStrategy::Blind, PromptStrategy::DiseaseInformed];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptStrategy::Blind => "blind",
            PromptStrategy::DiseaseInformed => "disease_informed",
        }
    }

    /// Label used in report tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            PromptStrategy::Blind => "Blind",
            PromptStrategy::DiseaseInformed => "Disease-Informed",
        }
    }
}

impl fmt::Display for PromptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "blind" => Ok(PromptStrategy::Blind),
            "disease_informed" | "informed" => Ok(PromptStrategy::DiseaseInformed),
            other => Err(format!("unknown prompt strategy `{other}`")),
        }
    }
}

// Note the two trailing spaces after "Model:" and the Gamma line; they are
// part of the reference prompt text.
const BLIND_PROMPT: &str = concat!(
    "You are a biostatistics expert specializing in clinical trials and Bayesian analysis.\n",
    "\n",
    "TASK: Provide ONLY rate parameters for exponential priors in a hierarchical Bayesian model.\n",
    "\n",
    "Model: \n",
    "- Each patient i in site j has AE count: y_ij ~ Poisson(lambda_j)\n",
    "- Site-specific rates: lambda_j ~ Gamma(alpha, beta)  \n",
    "- REQUIRED: alpha ~ Exponential(rate_alpha), beta ~ Exponential(rate_beta)\n",
    "\n",
    "IMPORTANT:\n",
    "- Use your expert knowledge and draw on published clinical trials, empirical data, or established domain knowledge to set informative (not weakly-informative or non-informative) prior rates.\n",
    "- Avoid using vague or default values. Base your answer on realistic clinical data or strong prior experience relevant to typical AE rates in multi-center trials.\n",
    "\n",
    "RESPOND WITH EXACTLY THIS JSON FORMAT (no markdown, no backticks, no other text):\n",
    "{\n",
    "\"alpha_rate\": number,\n",
    "\"beta_rate\": number\n",
    "}\n",
    "\n",
    "Note: Exponential(rate) has mean = 1/rate. Rate must be > 0.",
);

const DISEASE_INFORMED_PROMPT: &str = concat!(
    "You are a biostatistics expert specializing in oncology clinical trials and Bayesian analysis.\n",
    "\n",
    "TASK: Provide ONLY rate parameters for exponential priors based on NSCLC control arm data.\n",
    "\n",
    "Clinical Context:\n",
    "- Disease: Non-small cell lung cancer (NSCLC)\n",
    "- Treatment: Control arm (placebo/standard care)\n",
    "- Population: Adult oncology patients\n",
    "- Study: Multi-center RCT\n",
    "\n",
    "Model: \n",
    "- Each patient i in site j has AE count: y_ij ~ Poisson(lambda_j)\n",
    "- Site-specific rates: lambda_j ~ Gamma(alpha, beta)  \n",
    "- REQUIRED: alpha ~ Exponential(rate_alpha), beta ~ Exponential(rate_beta)\n",
    "\n",
    "IMPORTANT:\n",
    "- Use your expert knowledge and draw on published clinical trials, empirical data, or established domain knowledge specific to NSCLC control arms to set informative (not weakly-informative or non-informative) prior rates.\n",
    "- Avoid using vague or default values. Base your answer on realistic NSCLC control arm data or strong prior experience relevant to typical AE rates in multi-center oncology trials.\n",
    "\n",
    "RESPOND WITH EXACTLY THIS JSON FORMAT (no markdown, no backticks, no other text):\n",
    "{\n",
    "\"alpha_rate\": number,\n",
    "\"beta_rate\": number\n",
    "}\n",
    "\n",
    "Note: Exponential(rate) has mean = 1/rate. Rate must be > 0.",
);

/// The elicitation prompt for `strategy`, sent verbatim as the user message.
pub fn build_prompt(strategy: PromptStrategy) -> &'static str {
    match strategy {
        PromptStrategy::Blind => BLIND_PROMPT,
        PromptStrategy::DiseaseInformed => DISEASE_INFORMED_PROMPT,
    }
}
