"""Self-sovereign identity access control for shared vehicles.

An identity ledger holds DIDs, schemas, credential hashes and revocation
state. Verifier contracts on a separate authorization log evaluate holder
presentations against declarative policies and record every decision. A
bridge indexes the identity ledger and serves it to the runtime over HTTP.
"""

__version__ = "0.1.0"
