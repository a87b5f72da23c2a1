# Interface modules
