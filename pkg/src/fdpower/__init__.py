"""Power allocation lab for D2D networks with full-duplex nodes.

Library layout:

- netgen:    random instance generation, dataset files
- phy:       SINR / rate / weighted-sum-rate math
- graphrep:  pair-graph construction and edge truncation
- autodiff:  reverse-mode engine, MLPs, Adam, checkpoints
- fgnn:      the graph neural allocator, loss, training, evaluation
- baselines: WMMSE and greedy top-L
- threshold: truncation CDF, edge-count expectations, ideal threshold
- cli:       experiment harness (generate / train / eval / bench-time /
             threshold-sweep) emitting CSV tables and matplotlib figures
"""

__version__ = "0.1.0"
