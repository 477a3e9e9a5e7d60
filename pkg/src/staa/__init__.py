"""Spatio-temporal attention attribution for video transformers.

Subpackages/modules:
  videoio      -- clip representation, synthetic generation, raw/PPM file IO
  model        -- desk-scale space-time attention transformer
  attribution  -- attention aggregation, dynamic thresholding, normalization
  baselines    -- SHAP temporal and LIME spatial black-box attribution
  metrics      -- faithfulness, monotonicity (Kendall tau), cost accounting
  viz          -- heatmap overlays and latency CDF emission
  service      -- streaming explanation server/client over a framed protocol
  cli          -- command-line entry points
"""

__version__ = "0.1.0"
