from .significance import Significance, check_significance, default_replacement_grid, significance_table
