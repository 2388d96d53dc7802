from .grid import aggregate_grid, grid_search, pick_winner
from .reports import read_report, render_summary, summarize_run_dir, write_report
from .runner import PreparedData, build_system, method_settings, prepare_data, run_experiment, run_method
