"""Desk-scale DNA synthesis-order screening stack with an adversarial simulator.

Subpackages by layer, bottom up:

- crypto:    prime-order group backends, hash-to-group, signatures, AEAD
- doprf:     blinded distributed PRF evaluation over Shamir key shares
- pki:       the three custom certificate hierarchies, tokens, chains
- channel:   simplified one-way-authenticated handshake and record layer
- scep:      SCEP / SCEP+ mutual-authentication state machines, rate ledger
- screening: synthesizer / keyserver / hashed-db / auth-backend roles
- simnet:    deterministic network, transcripts, adversary taps
- closure:   Dolev-Yao adversary knowledge closure over transcripts
- scenarios: honest end-to-end scenarios and the world builder
- attacks:   scripted attack scenarios and their outcome assertions
- cli:       command-line front door
"""

__version__ = "0.1.0"
