from .ledger import BYTES_PER_SCALAR, CommLedger, Phase, ledger_total_mb, payload_bytes
from .system import BatchPlan, Party, VflSystem
from .training import evaluate, party_embed, pin_dead_columns, predict, train_epochs, vfl_train_step
