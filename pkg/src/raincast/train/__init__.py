from .checkpoint import (FORMAT_VERSION, Checkpoint, CheckpointError, checkpoint_io, decode_checkpoint,
                         encode_checkpoint, load_checkpoint, pack_state, save_checkpoint, unpack_state)
from .loop import (LOG_HEADER, TrainConfig, TrainResult, epoch_batches, epoch_order, evaluate, fit_batch,
                   load_model, predict_refs, read_epoch_log, resolve_model, train_loop, train_step,
                   write_epoch_log)
from .optim import AdamState, EarlyStopping, PlateauScheduler, adam_step, clip_gradients, global_norm
