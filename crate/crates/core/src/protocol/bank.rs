//! Desk-scale Σ-protocol: proving control of a bank account.
//!
//! The verifier knows the opening balance (`x`) and challenges the prover to
//! withdraw `n`. A prover holding the account's capability token performs the
//! withdrawal; one without it can only answer "Done". The response carries
//! the balance the verifier reads after the answer, so the decision is
//! "balance reduced by exactly `n`".

use thiserror::Error;

use super::{Payload, SigmaInstance};

/// Knowledge `w`: the token that authorizes withdrawals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capability(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BankError {
    #[error("capability rejected")]
    Unauthorized,
    #[error("insufficient funds: balance {balance}, requested {requested}")]
    InsufficientFunds { balance: u64, requested: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedBank {
    balance: u64,
    token: Capability,
}

impl SimulatedBank {
    pub fn new(balance: u64, token: Capability) -> Self {
        Self { balance, token }
    }

    pub fn balance(&self) -> u64 {
        self.balance
    }

    pub fn withdraw(&mut self, token: Capability, amount: u64) -> Result<u64, BankError> {
        if token != self.token {
            return Err(BankError::Unauthorized);
        }
        if amount > self.balance {
            return Err(BankError::InsufficientFunds { balance: self.balance, requested: amount });
        }
        self.balance -= amount;
        Ok(self.balance)
    }

    /// The public instance a verifier can check against, captured now.
    pub fn instance(&self) -> BankWithdrawal {
        BankWithdrawal { opening_balance: self.balance, token: self.token }
    }
}

/// Σ instance for "I control this account".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankWithdrawal {
    opening_balance: u64,
    token: Capability,
}

impl BankWithdrawal {
    pub fn opening_balance(&self) -> u64 {
        self.opening_balance
    }
}

fn as_amount(p: &Payload) -> Option<u64> {
    match p {
        Payload::Number(n) if *n >= 0.0 && n.fract() == 0.0 && *n <= u64::MAX as f64 => Some(*n as u64),
        _ => None,
    }
}

impl SigmaInstance for BankWithdrawal {
    fn common_input(&self) -> Payload {
        Payload::Number(self.opening_balance as f64)
    }

    fn relation_holds(&self, witness: &Payload) -> bool {
        as_amount(witness) == Some(self.token.0)
    }

    fn decide(&self, _setup: &Payload, challenge: &Payload, response: &Payload) -> bool {
        match (as_amount(challenge), as_amount(response)) {
            (Some(n), Some(after)) => self.opening_balance.checked_sub(after) == Some(n),
            _ => false,
        }
    }
}

/// The prover side. `token` is `None` for a bluffing prover.
#[derive(Debug, Clone, Copy)]
pub struct BankProver {
    pub token: Option<Capability>,
}

impl BankProver {
    pub fn setup(&self) -> Payload {
        Payload::Text("I control this account".into())
    }

    /// Answers the challenge ("Done") and returns the balance the verifier
    /// then observes.
    pub fn respond(&self, bank: &mut SimulatedBank, challenge: &Payload) -> Payload {
        if let (Some(token), Some(n)) = (self.token, as_amount(challenge)) {
            // A failed withdrawal leaves the balance as is; the verifier will reject.
            let _ = bank.withdraw(token, n);
        }
        Payload::Number(bank.balance() as f64)
    }
}
